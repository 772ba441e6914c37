use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::controllers::ControllerKind;
use crate::error::{Error, Result};
use crate::memory::MemoryKind;
use crate::model::{LossKind, ModelConfig};
use crate::tasks::{ToyTask, ToyTaskSpec, TOY_INPUT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Toy(ToyTask),
    Babi,
}

impl TaskKind {
    pub fn loss_kind(self) -> LossKind {
        match self {
            TaskKind::Toy(_) => LossKind::Bits,
            TaskKind::Babi => LossKind::Class,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Toy(t) => t.fmt(f),
            TaskKind::Babi => f.write_str("babi"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "babi" {
            Ok(TaskKind::Babi)
        } else {
            s.parse().map(TaskKind::Toy)
        }
    }
}

/// Everything that determines one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: MemoryKind,
    pub controller: ControllerKind,
    pub hidden: usize,
    pub slots: usize,
    pub width: usize,
    pub read_heads: usize,
    pub task: TaskKind,
    pub t_min: usize,
    pub t_max: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub iterations: usize,
    pub validation_interval: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub damping: f64,
    pub clip: f64,
    pub seed: u64,
    /// bAbI corpus directory; falls back to `MANN_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    /// Write elapsed seconds into the metrics; off makes the CSV fully
    /// reproducible.
    pub wall_clock: bool,
}

/// Keys accepted by [`ExperimentConfig::set`], in file order.
pub const CONFIG_KEYS: [&str; 23] = [
    "model",
    "controller",
    "hidden",
    "slots",
    "width",
    "read_heads",
    "task",
    "t_min",
    "t_max",
    "m_min",
    "m_max",
    "iterations",
    "validation_interval",
    "validation_size",
    "test_size",
    "lr",
    "momentum",
    "decay",
    "damping",
    "clip",
    "seed",
    "data_dir",
    "wall_clock",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full(ToyTask::Copy)
    }
}

impl ExperimentConfig {
    /// Full-scale toy settings: H = 128, memory 128 x 20, one read head (four
    /// for priority sort), T in [1, 20] (or [1, 10] with M in [1, 10] for
    /// repeat copy), a million sequences, validation every 1,000.
    pub fn full(task: ToyTask) -> Self {
        let repeat = task == ToyTask::RepeatCopy;
        ExperimentConfig {
            model: MemoryKind::Ntm,
            controller: ControllerKind::LstmPnr,
            hidden: 128,
            slots: 128,
            width: 20,
            read_heads: if task == ToyTask::PrioritySort { 4 } else { 1 },
            task: TaskKind::Toy(task),
            t_min: 1,
            t_max: if repeat { 10 } else { 20 },
            m_min: 1,
            m_max: 10,
            iterations: 1_000_000,
            validation_interval: 1_000,
            validation_size: 1_000,
            test_size: 10_000,
            lr: 1e-4,
            momentum: 0.9,
            decay: 0.95,
            damping: 1e-4,
            clip: 5.0,
            seed: 0,
            data_dir: None,
            wall_clock: true,
        }
    }

    /// Desk-scale copy: T in [1, 5], memory 64 x 12, H = 64, 30,000 iterations.
    pub fn desk() -> Self {
        ExperimentConfig {
            hidden: 64,
            slots: 64,
            width: 12,
            t_max: 5,
            iterations: 30_000,
            ..Self::full(ToyTask::Copy)
        }
    }

    /// Joint bAbI: DNC, H = 128, memory 128 x 32, four read heads,
    /// validation every 128 stories.
    pub fn babi() -> Self {
        ExperimentConfig {
            model: MemoryKind::Dnc,
            hidden: 128,
            slots: 128,
            width: 32,
            read_heads: 4,
            task: TaskKind::Babi,
            iterations: 100_000,
            validation_interval: 128,
            validation_size: 1_000,
            test_size: 0,
            ..Self::full(ToyTask::Copy)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(ToyTask::Copy)),
            "desk" => Ok(Self::desk()),
            "babi" => Ok(Self::babi()),
            other => match other.strip_prefix("full-") {
                Some(task) => Ok(Self::full(task.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown preset `{other}` (full, full-<task>, desk, babi)"
                ))),
            },
        }
    }

    /// Sets one field from its textual form. Dashes in `key` count as
    /// underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
        }
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "model" => self.model = value.parse()?,
            "controller" => self.controller = value.parse()?,
            "hidden" => self.hidden = num(key, value)?,
            "slots" => self.slots = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "read_heads" => self.read_heads = num(key, value)?,
            "task" => self.task = value.parse()?,
            "t_min" => self.t_min = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "m_min" => self.m_min = num(key, value)?,
            "m_max" => self.m_max = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "validation_interval" => self.validation_interval = num(key, value)?,
            "validation_size" => self.validation_size = num(key, value)?,
            "test_size" => self.test_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "decay" => self.decay = num(key, value)?,
            "damping" => self.damping = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "wall_clock" => {
                self.wall_clock = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(Error::Config(format!("`{key}` expects true or false"))),
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                message: "expected key = value".into(),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        self.apply_text(&text, path)
    }

    /// Renders the config as a file [`apply_text`](Self::apply_text) accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "model" => self.model.to_string(),
                "controller" => self.controller.to_string(),
                "hidden" => self.hidden.to_string(),
                "slots" => self.slots.to_string(),
                "width" => self.width.to_string(),
                "read_heads" => self.read_heads.to_string(),
                "task" => self.task.to_string(),
                "t_min" => self.t_min.to_string(),
                "t_max" => self.t_max.to_string(),
                "m_min" => self.m_min.to_string(),
                "m_max" => self.m_max.to_string(),
                "iterations" => self.iterations.to_string(),
                "validation_interval" => self.validation_interval.to_string(),
                "validation_size" => self.validation_size.to_string(),
                "test_size" => self.test_size.to_string(),
                "lr" => format!("{:e}", self.lr),
                "momentum" => self.momentum.to_string(),
                "decay" => self.decay.to_string(),
                "damping" => format!("{:e}", self.damping),
                "clip" => self.clip.to_string(),
                "seed" => self.seed.to_string(),
                "data_dir" => match &self.data_dir {
                    Some(p) => p.display().to_string(),
                    None => continue,
                },
                "wall_clock" => self.wall_clock.to_string(),
                _ => unreachable!(),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// A one-line summary for trace headers and logs.
    pub fn summary(&self) -> String {
        format!(
            "model={} controller={} task={} H={} N={} W={} R={} T={}..{} seed={}",
            self.model,
            self.controller,
            self.task,
            self.hidden,
            self.slots,
            self.width,
            self.read_heads,
            self.t_min,
            self.t_max,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("slots", self.slots),
            ("width", self.width),
            ("read_heads", self.read_heads),
            ("validation_interval", self.validation_interval),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if let TaskKind::Toy(task) = self.task {
            if self.t_min == 0 || self.t_min > self.t_max {
                return Err(Error::Config(format!(
                    "invalid length range t_min={} t_max={}",
                    self.t_min, self.t_max
                )));
            }
            if task == ToyTask::RepeatCopy && (self.m_min == 0 || self.m_min > self.m_max) {
                return Err(Error::Config(format!(
                    "invalid repeat range m_min={} m_max={}",
                    self.m_min, self.m_max
                )));
            }
        }
        let reals = [
            ("lr", self.lr),
            ("clip", self.clip),
            ("damping", self.damping),
        ];
        for (k, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config("momentum and decay must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn toy_spec(&self) -> Option<ToyTaskSpec> {
        match self.task {
            TaskKind::Toy(task) => Some(ToyTaskSpec {
                task,
                t_range: self.t_min..=self.t_max,
                m_range: self.m_min..=self.m_max,
            }),
            TaskKind::Babi => None,
        }
    }

    /// Model geometry; bAbI input and output widths come from the vocabulary.
    pub fn model_config(&self, vocabulary: Option<usize>) -> Result<ModelConfig> {
        let (input, output) = match (self.task, vocabulary) {
            (TaskKind::Toy(t), _) => (TOY_INPUT, t.output_dim()),
            (TaskKind::Babi, Some(v)) => (v, v),
            (TaskKind::Babi, None) => {
                return Err(Error::Config("bAbI model needs the vocabulary size".into()))
            }
        };
        let cfg = ModelConfig {
            memory: self.model,
            controller: self.controller,
            input,
            output,
            hidden: self.hidden,
            slots: self.slots,
            width: self.width,
            read_heads: self.read_heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os("MANN_DATA_DIR").map(PathBuf::from))
    }
}
