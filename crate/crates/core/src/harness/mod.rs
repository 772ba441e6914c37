//! Experiment runner: configuration, online training with validation and
//! best-checkpoint selection, evaluation metrics, traces, and multi-seed
//! suites.

pub mod config;
pub mod eval;
pub mod suite;
pub mod trace;
pub mod train;

pub use config::{ExperimentConfig, TaskKind};
pub use eval::{evaluate_babi_error, evaluate_bit_error, BabiReport, ModelPredictor, Predictor};
pub use suite::{aggregate, run_suite, SuiteEntry};
pub use trace::{copy_overlap, dump_trace, trace_records, TraceRecord};
pub use train::{train, DataSource, MetricsRecord, TrainOptions, TrainOutcome};
