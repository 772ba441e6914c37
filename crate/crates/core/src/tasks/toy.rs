use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;

use super::TaskSample;
use crate::error::{Error, Result};

/// Random bits per content vector.
pub const CONTENT_BITS: usize = 8;
/// Channel carrying the end marker (and the repeat count).
pub const END_CHANNEL: usize = 8;
/// Input width of every toy task.
pub const TOY_INPUT: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ToyTask {
    Copy,
    Reverse,
    BigramFlip,
    OddFirst,
    RepeatCopy,
    PrioritySort,
}

impl ToyTask {
    pub const ALL: [ToyTask; 6] = [
        ToyTask::Copy,
        ToyTask::Reverse,
        ToyTask::BigramFlip,
        ToyTask::OddFirst,
        ToyTask::RepeatCopy,
        ToyTask::PrioritySort,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ToyTask::Copy => "copy",
            ToyTask::Reverse => "reverse",
            ToyTask::BigramFlip => "bigram_flip",
            ToyTask::OddFirst => "odd_first",
            ToyTask::RepeatCopy => "repeat_copy",
            ToyTask::PrioritySort => "priority_sort",
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            ToyTask::RepeatCopy => CONTENT_BITS + 1,
            _ => CONTENT_BITS,
        }
    }

    /// Order in which content vectors appear in the target (before repetition).
    fn order(self, content: &[Vec<f64>]) -> Vec<usize> {
        let t = content.len();
        match self {
            ToyTask::Copy | ToyTask::RepeatCopy => (0..t).collect(),
            ToyTask::Reverse => (0..t).rev().collect(),
            ToyTask::BigramFlip => (0..t)
                .map(|i| if i % 2 == 0 { if i + 1 < t { i + 1 } else { i } } else { i - 1 })
                .collect(),
            ToyTask::OddFirst => (0..t).step_by(2).chain((1..t).step_by(2)).collect(),
            ToyTask::PrioritySort => {
                let mut idx: Vec<usize> = (0..t).collect();
                idx.sort_by_key(|&i| priority_key(&content[i]));
                idx
            }
        }
    }
}

impl fmt::Display for ToyTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ToyTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyTask::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Integer value of the content bits, first channel most significant.
pub fn priority_key(bits: &[f64]) -> u32 {
    bits[..CONTENT_BITS]
        .iter()
        .fold(0, |acc, &b| (acc << 1) | u32::from(b > 0.5))
}

/// Count vector `[0; 8] ++ [m / m_max]`.
pub fn encode_repeat_count(m: usize, m_range: &RangeInclusive<usize>) -> Result<Vec<f64>> {
    if *m_range.start() == 0 || !m_range.contains(&m) {
        return Err(Error::Config(format!(
            "repeat count {m} outside {}..={} (counts start at 1)",
            m_range.start(),
            m_range.end()
        )));
    }
    let mut v = vec![0.0; TOY_INPUT];
    v[END_CHANNEL] = m as f64 / *m_range.end() as f64;
    Ok(v)
}

fn end_marker(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[dim - 1] = 1.0;
    v
}

/// Assembles a sample from explicit content vectors (each `CONTENT_BITS`
/// long). `repeats` and `m_range` only matter for repeat copy.
pub fn build_toy(
    task: ToyTask,
    content: &[Vec<f64>],
    repeats: usize,
    m_range: &RangeInclusive<usize>,
) -> Result<TaskSample> {
    if content.is_empty() {
        return Err(Error::Config("toy sample needs at least one content vector".into()));
    }
    let out_dim = task.output_dim();
    let mut inputs: Vec<Vec<f64>> = content
        .iter()
        .map(|c| {
            let mut v = c.clone();
            v.push(0.0);
            v
        })
        .collect();
    if task == ToyTask::RepeatCopy {
        inputs.push(encode_repeat_count(repeats, m_range)?);
    }
    inputs.push(end_marker(TOY_INPUT));

    let order = task.order(content);
    let passes = if task == ToyTask::RepeatCopy { repeats } else { 1 };
    let mut answer: Vec<Vec<f64>> = Vec::with_capacity(order.len() * passes + 1);
    for _ in 0..passes {
        for &i in &order {
            let mut y = content[i].clone();
            y.resize(out_dim, 0.0);
            answer.push(y);
        }
    }
    if task == ToyTask::RepeatCopy {
        answer.push(end_marker(out_dim));
    }

    let lead = inputs.len();
    let horizon = lead + answer.len();
    inputs.resize(horizon, vec![0.0; TOY_INPUT]);
    let mut targets = vec![vec![0.0; out_dim]; lead];
    targets.extend(answer);
    let mask = (0..horizon).map(|t| t >= lead).collect();
    Ok(TaskSample {
        inputs,
        targets,
        mask,
    })
}

/// Draws `T` (and `M`) uniformly from the ranges, then random content bits.
pub fn gen_toy<R: Rng>(
    task: ToyTask,
    rng: &mut R,
    t_range: &RangeInclusive<usize>,
    m_range: &RangeInclusive<usize>,
) -> Result<TaskSample> {
    if t_range.is_empty() || *t_range.start() == 0 {
        return Err(Error::Config(format!(
            "sequence length range {}..={} is empty",
            t_range.start(),
            t_range.end()
        )));
    }
    let t = rng.gen_range(t_range.clone());
    let m = if task == ToyTask::RepeatCopy {
        if m_range.is_empty() {
            return Err(Error::Config("repeat range is empty".into()));
        }
        rng.gen_range(m_range.clone())
    } else {
        1
    };
    let content: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..CONTENT_BITS).map(|_| f64::from(rng.gen::<bool>() as u8)).collect())
        .collect();
    build_toy(task, &content, m, m_range)
}

/// A task plus its length ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTaskSpec {
    pub task: ToyTask,
    pub t_range: RangeInclusive<usize>,
    pub m_range: RangeInclusive<usize>,
}

impl ToyTaskSpec {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<TaskSample> {
        gen_toy(self.task, rng, &self.t_range, &self.m_range)
    }
}
