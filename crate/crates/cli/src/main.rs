use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use mann::graph::param_count;
use mann::harness::config::CONFIG_KEYS;
use mann::harness::trace::check_trace;
use mann::harness::train::{load_model, test_score};
use mann::harness::{
    copy_overlap, dump_trace, run_suite, trace_records, train, DataSource, ExperimentConfig,
    TaskKind, TrainOptions,
};
use mann::tasks::{cache, init_rng, sample_rng, Split};
use mann::Error;

#[derive(Parser)]
#[command(name = "mann", version, about = "NTM / DNC training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Starting preset: full, full-<task>, desk, babi.
    #[arg(long, default_value = "full")]
    preset: String,
    /// key = value file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra overrides, `key=value`; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    slots: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    read_heads: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    t_min: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    m_min: Option<String>,
    #[arg(long)]
    m_max: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    validation_interval: Option<String>,
    #[arg(long)]
    validation_size: Option<String>,
    #[arg(long)]
    test_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    damping: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    wall_clock: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> [(&'static str, &Option<String>); 23] {
        [
            ("model", &self.model),
            ("controller", &self.controller),
            ("hidden", &self.hidden),
            ("slots", &self.slots),
            ("width", &self.width),
            ("read_heads", &self.read_heads),
            ("task", &self.task),
            ("t_min", &self.t_min),
            ("t_max", &self.t_max),
            ("m_min", &self.m_min),
            ("m_max", &self.m_max),
            ("iterations", &self.iterations),
            ("validation_interval", &self.validation_interval),
            ("validation_size", &self.validation_size),
            ("test_size", &self.test_size),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("decay", &self.decay),
            ("damping", &self.damping),
            ("clip", &self.clip),
            ("seed", &self.seed),
            ("data_dir", &self.data_dir),
            ("wall_clock", &self.wall_clock),
        ]
    }

    /// Preset, then file, then flags, then `--set`.
    fn resolve(&self) -> mann::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.flags() {
            debug_assert!(CONFIG_KEYS.contains(&key));
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {kv}` is not key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes best.ckpt, metrics.csv, config.txt to --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Also report the test score of the best checkpoint.
        #[arg(long)]
        test: bool,
    },
    /// Test score of a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-step trace of one test episode.
    Trace {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Untrained initialization if omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test-set index of the episode.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, default_value = "trace.txt")]
        out: PathBuf,
    },
    /// Train and test several controllers over several seeds.
    Suite {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated controller kinds to compare.
        #[arg(long, default_value = "lstm-pnr,lstm")]
        controllers: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter count of the configured model.
    ParamCount {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write toy samples to a flat binary cache.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| anyhow::anyhow!("bad {what} `{x}`")))
        .collect()
}

fn data_for(cfg: &ExperimentConfig) -> anyhow::Result<DataSource> {
    DataSource::from_config(cfg).context("loading data")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { cfg, out, test } => {
            let cfg = cfg.resolve()?;
            let data = data_for(&cfg)?;
            eprintln!("{}", cfg.summary());
            let opts = TrainOptions {
                out_dir: Some(out.clone()),
                on_record: Some(Box::new(|r| eprintln!("{}", r.csv_row()))),
                ..Default::default()
            };
            let outcome = train(&cfg, &data, opts)?;
            println!(
                "best_iteration={} best_val_loss={}",
                outcome.best_iteration,
                outcome.best_val_loss.map_or("n/a".into(), |v| format!("{v:.6}"))
            );
            if test && outcome.diverged.is_none() {
                let (score, report) = test_score(&cfg, &data, &outcome.best)?;
                println!("test_error={score:.4}");
                if let Some(r) = report {
                    for (task, e) in r.per_task {
                        println!("task{task}_error={e:.4}");
                    }
                }
            }
            outcome.into_result()?;
        }
        Command::Eval { cfg, checkpoint } => {
            let cfg = cfg.resolve()?;
            let data = data_for(&cfg)?;
            let model = load_model(&cfg, &data, &checkpoint)?;
            let (score, report) = test_score(&cfg, &data, &model)?;
            println!("test_error={score:.4}");
            if let Some(r) = report {
                for (task, e) in r.per_task {
                    println!("task{task}_error={e:.4} questions={}", r.questions[&task]);
                }
            }
        }
        Command::Trace {
            cfg,
            checkpoint,
            index,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let data = data_for(&cfg)?;
            let model = match &checkpoint {
                Some(p) => load_model(&cfg, &data, p)?,
                None => mann::harness::train::init_model(&cfg, &data)?,
            };
            let sample = match &data {
                DataSource::Toy { spec, seed } => {
                    spec.sample(&mut sample_rng(*seed, Split::Test, index))?
                }
                DataSource::Babi { .. } => {
                    let mut set = data.test_set(0)?;
                    if index as usize >= set.len() {
                        bail!("test index {index} out of range ({} stories)", set.len());
                    }
                    set.swap_remove(index as usize).1
                }
            };
            let recs = trace_records(&model, &sample, cfg.task.loss_kind())?;
            if let Err(e) = check_trace(&recs, cfg.model, 1e-6) {
                bail!("trace violates weighting invariants: {e}");
            }
            dump_trace(&out, &cfg.summary(), &recs)?;
            if let TaskKind::Toy(mann::tasks::ToyTask::Copy) = cfg.task {
                let len = sample.mask.iter().filter(|&&m| m).count();
                println!("copy_overlap={:.6}", copy_overlap(&recs, len));
            }
            println!("wrote {} records to {}", recs.len(), out.display());
        }
        Command::Suite {
            cfg,
            controllers,
            seeds,
            out,
        } => {
            let base = cfg.resolve()?;
            let seeds: Vec<u64> = parse_list(&seeds, "seed")?;
            let configs = parse_list::<mann::controllers::ControllerKind>(&controllers, "controller")?
                .into_iter()
                .map(|controller| ExperimentConfig {
                    controller,
                    ..base.clone()
                })
                .collect::<Vec<_>>();
            let entries = run_suite(&configs, &seeds, out);
            print!("{}", mann::harness::suite::format_report(&entries));
        }
        Command::ParamCount { cfg } => {
            let cfg = cfg.resolve()?;
            let vocab = match cfg.task {
                TaskKind::Babi => data_for(&cfg)?.vocabulary_size(),
                TaskKind::Toy(_) => None,
            };
            let model = mann::model::Model::new(cfg.model_config(vocab)?, &mut init_rng(cfg.seed))?;
            for p in model.params.iter() {
                println!("{}\t{}x{}", p.name(), p.value().rows(), p.value().cols());
            }
            println!("total\t{}", param_count(&model.params));
        }
        Command::GenData {
            cfg,
            split,
            count,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let spec = cfg
                .toy_spec()
                .ok_or_else(|| Error::Config("gen-data covers toy tasks only".into()))?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "validation" => Split::Validation,
                "test" => Split::Test,
                other => return Err(Error::Config(format!("unknown split `{other}`")).into()),
            };
            let samples = (0..count)
                .map(|i| spec.sample(&mut sample_rng(cfg.seed, split, i)))
                .collect::<mann::Result<Vec<_>>>()?;
            cache::save(&out, &samples)?;
            println!("wrote {count} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_) | Error::Parse { .. }) => ExitCode::from(2),
                Some(Error::Diverged { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
