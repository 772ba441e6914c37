//! bAbI question answering: parsing the distributed text files into stories,
//! a deterministic vocabulary, and one-hot episode encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::TaskSample;
use crate::error::{Error, Result};

/// Task ids of the joint corpus.
pub const BABI_TASKS: [u8; 6] = [1, 4, 9, 10, 11, 14];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BabiSplit {
    Train,
    Test,
}

impl BabiSplit {
    fn suffix(self) -> &'static str {
        match self {
            BabiSplit::Train => "train",
            BabiSplit::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BabiFile {
    pub task: u8,
    pub split: BabiSplit,
    pub path: PathBuf,
}

impl BabiFile {
    /// Finds `qa{task}_*_{train,test}.txt` for every joint task in `dir`.
    pub fn discover(dir: &Path) -> Result<Vec<BabiFile>> {
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        let mut files = Vec::new();
        for task in BABI_TASKS {
            for split in [BabiSplit::Train, BabiSplit::Test] {
                let prefix = format!("qa{task}_");
                let suffix = format!("_{}.txt", split.suffix());
                let hit = names
                    .iter()
                    .find(|n| n.starts_with(&prefix) && n.ends_with(&suffix))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "no {prefix}*{suffix} file in {}",
                            dir.display()
                        ))
                    })?;
                files.push(BabiFile {
                    task,
                    split,
                    path: dir.join(hit),
                });
            }
        }
        Ok(files)
    }
}

/// Word-to-index map in sorted word order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let words: Vec<String> = set.into_iter().collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    /// Token position of the question's `?`.
    pub position: usize,
    pub answer: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Story {
    pub task: u8,
    pub split: BabiSplit,
    pub tokens: Vec<usize>,
    pub questions: Vec<Question>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BabiCorpus {
    pub vocabulary: Vocabulary,
    pub stories: Vec<Story>,
}

struct RawStory {
    task: u8,
    split: BabiSplit,
    tokens: Vec<String>,
    /// (position of `?`, answer word, line number)
    questions: Vec<(usize, String, usize)>,
    path: PathBuf,
}

/// Lowercases and splits `. ? , ! ;` into their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if matches!(ch, '.' | '?' | ',' | '!' | ';') {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

fn parse_file(file: &BabiFile, text: &str) -> Result<Vec<RawStory>> {
    let err = |line: usize, message: String| Error::Parse {
        path: file.path.clone(),
        line,
        message,
    };
    let mut stories = Vec::new();
    let mut cur: Option<RawStory> = None;
    let mut last_id = 0usize;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once(' ')
            .ok_or_else(|| err(lineno, "expected `ID text`".into()))?;
        let id: usize = id
            .parse()
            .map_err(|_| err(lineno, format!("line id `{id}` is not an integer")))?;
        if id == 0 {
            return Err(err(lineno, "line ids start at 1".into()));
        }
        if id == 1 || id <= last_id || cur.is_none() {
            if id != 1 {
                return Err(err(lineno, format!("story must start at id 1, found {id}")));
            }
            stories.extend(cur.take());
            cur = Some(RawStory {
                task: file.task,
                split: file.split,
                tokens: Vec::new(),
                questions: Vec::new(),
                path: file.path.clone(),
            });
        }
        last_id = id;
        let story = cur.as_mut().expect("story open");
        let mut fields = rest.split('\t');
        let text = fields.next().unwrap_or_default();
        match fields.next() {
            None => {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    return Err(err(lineno, "empty statement".into()));
                }
                story.tokens.extend(tokens);
            }
            Some(answer) => {
                let tokens = tokenize(text);
                if tokens.last().map(String::as_str) != Some("?") {
                    return Err(err(lineno, "question must end with `?`".into()));
                }
                let answer = answer.trim().to_lowercase();
                if answer.is_empty() || answer.contains(char::is_whitespace) || answer.contains(',') {
                    return Err(err(lineno, format!("answer `{answer}` is not a single word")));
                }
                story.tokens.extend(tokens);
                story
                    .questions
                    .push((story.tokens.len() - 1, answer, lineno));
            }
        }
    }
    stories.extend(cur);
    Ok(stories)
}

fn read_raw(files: &[BabiFile]) -> Result<Vec<RawStory>> {
    let mut raw = Vec::new();
    for f in files {
        if !BABI_TASKS.contains(&f.task) {
            return Err(Error::Config(format!(
                "task {} is not part of the joint corpus",
                f.task
            )));
        }
        let text = fs::read_to_string(&f.path)?;
        raw.extend(parse_file(f, &text)?);
    }
    Ok(raw)
}

fn index_raw(raw: Vec<RawStory>, vocabulary: Vocabulary) -> Result<BabiCorpus> {
    let mut stories = Vec::with_capacity(raw.len());
    for s in raw {
        let tokens = s
            .tokens
            .iter()
            .map(|w| {
                vocabulary.get(w).ok_or_else(|| Error::Parse {
                    path: s.path.clone(),
                    line: 0,
                    message: format!("word `{w}` is not in the vocabulary"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let questions = s
            .questions
            .iter()
            .map(|(position, answer, line)| {
                let answer = vocabulary.get(answer).ok_or_else(|| Error::Parse {
                    path: s.path.clone(),
                    line: *line,
                    message: format!("unknown answer word `{answer}`"),
                })?;
                Ok(Question {
                    position: *position,
                    answer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        stories.push(Story {
            task: s.task,
            split: s.split,
            tokens,
            questions,
        });
    }
    Ok(BabiCorpus {
        vocabulary,
        stories,
    })
}

impl BabiCorpus {
    /// Parses `files`, building the vocabulary from every token and answer.
    pub fn parse(files: &[BabiFile]) -> Result<Self> {
        let raw = read_raw(files)?;
        let words = raw.iter().flat_map(|s| {
            s.tokens
                .iter()
                .cloned()
                .chain(s.questions.iter().map(|q| q.1.clone()))
        });
        let vocabulary = Vocabulary::from_words(words.collect::<Vec<_>>());
        index_raw(raw, vocabulary)
    }

    /// Parses `files` against a fixed vocabulary; out-of-vocabulary tokens or
    /// answers are errors.
    pub fn parse_with_vocabulary(files: &[BabiFile], vocabulary: Vocabulary) -> Result<Self> {
        index_raw(read_raw(files)?, vocabulary)
    }

    /// Every joint-task file under `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::parse(&BabiFile::discover(dir)?)
    }

    pub fn question_count(&self) -> usize {
        self.stories.iter().map(|s| s.questions.len()).sum()
    }

    pub fn split(&self, split: BabiSplit) -> impl Iterator<Item = &Story> {
        self.stories.iter().filter(move |s| s.split == split)
    }
}

/// One word per step; the answer one-hot is the target at each `?` step.
pub fn babi_encode(story: &Story, vocabulary: &Vocabulary) -> TaskSample {
    let v = vocabulary.len();
    let one_hot = |i: usize| {
        let mut x = vec![0.0; v];
        x[i] = 1.0;
        x
    };
    let inputs: Vec<Vec<f64>> = story.tokens.iter().map(|&t| one_hot(t)).collect();
    let mut targets = vec![vec![0.0; v]; inputs.len()];
    let mut mask = vec![false; inputs.len()];
    for q in &story.questions {
        targets[q.position] = one_hot(q.answer);
        mask[q.position] = true;
    }
    TaskSample {
        inputs,
        targets,
        mask,
    }
}
