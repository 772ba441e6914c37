use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{ExperimentConfig, TaskKind};
use super::eval::{validation_scores, BabiReport};
use crate::error::{Error, Result};
use crate::graph::{checkpoint, clip_global_norm, ParamSet, RmsProp};
use crate::model::Model;
use crate::tasks::{
    babi_encode, init_rng, sample_rng, BabiCorpus, BabiSplit, Split, TaskSample, ToyTaskSpec,
};

/// Where episodes come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Streams keyed by `(seed, split, index)`.
    Toy { spec: ToyTaskSpec, seed: u64 },
    /// Training stories minus a held-out tail used for validation.
    Babi {
        corpus: Arc<BabiCorpus>,
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
        seed: u64,
    },
}

impl DataSource {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.task {
            TaskKind::Toy(_) => Ok(DataSource::Toy {
                spec: cfg.toy_spec().expect("toy task"),
                seed: cfg.seed,
            }),
            TaskKind::Babi => {
                let dir = cfg.data_dir().ok_or_else(|| {
                    Error::Config("bAbI needs data_dir or MANN_DATA_DIR".into())
                })?;
                let corpus = BabiCorpus::load_dir(&dir)?;
                Ok(Self::babi(Arc::new(corpus), cfg.validation_size, cfg.seed))
            }
        }
    }

    /// The last `validation_size` training stories become the validation set.
    pub fn babi(corpus: Arc<BabiCorpus>, validation_size: usize, seed: u64) -> Self {
        let pick = |split| {
            corpus
                .stories
                .iter()
                .enumerate()
                .filter(|(_, s)| s.split == split)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        let mut train = pick(BabiSplit::Train);
        let test = pick(BabiSplit::Test);
        let cut = train.len().saturating_sub(validation_size);
        let validation = train.split_off(cut);
        DataSource::Babi {
            corpus,
            train,
            validation,
            test,
            seed,
        }
    }

    pub fn vocabulary_size(&self) -> Option<usize> {
        match self {
            DataSource::Toy { .. } => None,
            DataSource::Babi { corpus, .. } => Some(corpus.vocabulary.len()),
        }
    }

    fn encode(corpus: &BabiCorpus, idx: &[usize]) -> Vec<(u8, TaskSample)> {
        idx.iter()
            .map(|&i| {
                let s = &corpus.stories[i];
                (s.task, babi_encode(s, &corpus.vocabulary))
            })
            .collect()
    }

    pub fn validation_set(&self, size: usize) -> Result<Vec<TaskSample>> {
        match self {
            DataSource::Toy { spec, seed } => (0..size as u64)
                .map(|i| spec.sample(&mut sample_rng(*seed, Split::Validation, i)))
                .collect(),
            DataSource::Babi {
                corpus, validation, ..
            } => Ok(Self::encode(corpus, validation).into_iter().map(|p| p.1).collect()),
        }
    }

    /// Test episodes tagged with their task id (0 for toy tasks).
    pub fn test_set(&self, size: usize) -> Result<Vec<(u8, TaskSample)>> {
        match self {
            DataSource::Toy { spec, seed } => (0..size as u64)
                .map(|i| Ok((0, spec.sample(&mut sample_rng(*seed, Split::Test, i))?)))
                .collect(),
            DataSource::Babi { corpus, test, .. } => {
                let idx = if size == 0 { &test[..] } else { &test[..size.min(test.len())] };
                Ok(Self::encode(corpus, idx))
            }
        }
    }

    fn train_stream(&self) -> TrainStream<'_> {
        TrainStream {
            source: self,
            order: Vec::new(),
            epoch: 0,
        }
    }
}

struct TrainStream<'a> {
    source: &'a DataSource,
    order: Vec<usize>,
    epoch: u64,
}

impl TrainStream<'_> {
    fn sample(&mut self, iteration: usize) -> Result<TaskSample> {
        match self.source {
            DataSource::Toy { spec, seed } => {
                spec.sample(&mut sample_rng(*seed, Split::Train, iteration as u64))
            }
            DataSource::Babi {
                corpus,
                train,
                seed,
                ..
            } => {
                if train.is_empty() {
                    return Err(Error::Config("no bAbI training stories".into()));
                }
                let pos = iteration % train.len();
                if pos == 0 || self.order.is_empty() {
                    self.order = train.clone();
                    // epoch shuffles reuse the train stream past any toy index
                    let mut rng = sample_rng(*seed, Split::Train, (1 << 40) + self.epoch);
                    self.order.shuffle(&mut rng);
                    self.epoch += 1;
                }
                let s = &corpus.stories[self.order[pos]];
                Ok(babi_encode(s, &corpus.vocabulary))
            }
        }
    }
}

/// One validation row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Percent; bit error for toy tasks, question error for bAbI.
    pub val_bit_error: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "iteration,train_loss,val_loss,val_bit_error,seconds";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:.3}",
            self.iteration, self.train_loss, self.val_loss, self.val_bit_error, self.seconds
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Clips gradients to `clip`, takes one optimizer step, and returns the
/// pre-clip global norm.
pub fn apply_update(params: &mut ParamSet, clip: f64, opt: &RmsProp) -> f64 {
    let norm = clip_global_norm(params, clip);
    opt.step(params);
    norm
}

pub fn optimizer(cfg: &ExperimentConfig) -> RmsProp {
    RmsProp {
        lr: cfg.lr,
        momentum: cfg.momentum,
        decay: cfg.decay,
        damping: cfg.damping,
    }
}

/// Fresh model for `cfg`, initialized from the run seed.
pub fn init_model(cfg: &ExperimentConfig, data: &DataSource) -> Result<Model> {
    let mc = cfg.model_config(data.vocabulary_size())?;
    Model::new(mc, &mut init_rng(cfg.seed))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (the initialization if no
    /// validation ran).
    pub best: Model,
    pub best_iteration: usize,
    pub best_val_loss: Option<f64>,
    pub metrics: Vec<MetricsRecord>,
    /// `(iteration, loss)` of the first non-finite loss, if any.
    pub diverged: Option<(usize, f64)>,
    pub final_model: Model,
}

impl TrainOutcome {
    pub fn into_result(self) -> Result<Self> {
        match self.diverged {
            Some((iteration, loss)) => Err(Error::Diverged { iteration, loss }),
            None => Ok(self),
        }
    }
}

type RecordHook<'a> = Box<dyn FnMut(&MetricsRecord) + 'a>;
type StepHook<'a> = Box<dyn FnMut(usize, f64) + 'a>;

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Receives `best.ckpt`, `metrics.csv`, and `config.txt`.
    pub out_dir: Option<PathBuf>,
    pub on_record: Option<RecordHook<'a>>,
    /// Called with `(iteration, training loss)` after every update.
    pub on_step: Option<StepHook<'a>>,
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

/// Online training with periodic validation and best-checkpoint selection.
pub fn train(cfg: &ExperimentConfig, data: &DataSource, mut opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let kind = cfg.task.loss_kind();
    let mut model = init_model(cfg, data)?;
    let validation = data.validation_set(cfg.validation_size)?;
    let opt = optimizer(cfg);
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        write_file(dir, CONFIG_FILE, &cfg.to_text())?;
        checkpoint::save(&model.params, dir.join(BEST_CHECKPOINT))?;
    }

    let start = Instant::now();
    let mut best = model.clone();
    let mut best_iteration = 0;
    let mut best_val_loss: Option<f64> = None;
    let mut metrics = Vec::new();
    let mut diverged = None;
    let mut stream = data.train_stream();
    let mut window = Vec::with_capacity(cfg.validation_interval);

    for it in 1..=cfg.iterations {
        let sample = stream.sample(it - 1)?;
        let loss = model.accumulate_gradients(&sample, kind)?;
        if !loss.is_finite() {
            diverged = Some((it, loss));
            break;
        }
        apply_update(&mut model.params, cfg.clip, &opt);
        if model.params.iter().any(|p| !p.value().is_finite()) {
            diverged = Some((it, f64::NAN));
            break;
        }
        window.push(loss);
        if let Some(cb) = opts.on_step.as_mut() {
            cb(it, loss);
        }

        if it % cfg.validation_interval == 0 || it == cfg.iterations {
            let (val_loss, val_err) = validation_scores(&model, &validation, kind)?;
            let record = MetricsRecord {
                iteration: it,
                train_loss: super::eval::mean(&window),
                val_loss,
                val_bit_error: val_err,
                seconds: if cfg.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
            };
            window.clear();
            if best_val_loss.is_none_or(|b| val_loss < b) && val_loss.is_finite() {
                best_val_loss = Some(val_loss);
                best_iteration = it;
                best = model.clone();
                if let Some(dir) = &opts.out_dir {
                    checkpoint::save(&best.params, dir.join(BEST_CHECKPOINT))?;
                }
            }
            if let Some(cb) = opts.on_record.as_mut() {
                cb(&record);
            }
            metrics.push(record);
            if let Some(dir) = &opts.out_dir {
                write_file(dir, METRICS_FILE, &metrics_csv(&metrics))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        write_file(dir, METRICS_FILE, &metrics_csv(&metrics))?;
    }
    Ok(TrainOutcome {
        best,
        best_iteration,
        best_val_loss,
        metrics,
        diverged,
        final_model: model,
    })
}

/// Test score of a trained model: bit error percent for toy tasks, mean
/// per-task error percent for bAbI.
pub fn test_score(cfg: &ExperimentConfig, data: &DataSource, model: &Model) -> Result<(f64, Option<BabiReport>)> {
    use super::eval::{evaluate_babi_error, evaluate_bit_error, ModelPredictor};
    let set = data.test_set(cfg.test_size)?;
    let p = ModelPredictor {
        model,
        kind: cfg.task.loss_kind(),
    };
    match cfg.task {
        TaskKind::Toy(_) => {
            let samples: Vec<TaskSample> = set.into_iter().map(|p| p.1).collect();
            Ok((evaluate_bit_error(&p, &samples)?, None))
        }
        TaskKind::Babi => {
            let r = evaluate_babi_error(&p, &set)?;
            Ok((r.mean, Some(r)))
        }
    }
}

/// Rebuilds the model for `cfg` and loads parameters from `path`.
pub fn load_model(cfg: &ExperimentConfig, data: &DataSource, path: &Path) -> Result<Model> {
    let mut model = init_model(cfg, data)?;
    checkpoint::load_into(&mut model.params, path)?;
    Ok(model)
}
