use std::path::PathBuf;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::train::{test_score, train, DataSource, TrainOptions};

/// One (config, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// Test error percent, or the failure message.
    pub score: Result<f64, String>,
    pub best_iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    /// Mean over successful runs.
    pub mean: Option<f64>,
    /// Runs scoring exactly 0.0.
    pub solved: usize,
    pub failed: usize,
}

/// Mean of the scores and how many are exactly zero.
pub fn aggregate(scores: &[f64]) -> (Option<f64>, usize) {
    if scores.is_empty() {
        return (None, 0);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    (Some(mean), scores.iter().filter(|&&s| s == 0.0).count())
}

fn run_one(cfg: &ExperimentConfig, out_dir: Option<PathBuf>) -> Result<(f64, usize), String> {
    let data = DataSource::from_config(cfg).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        out_dir,
        ..Default::default()
    };
    let out = train(cfg, &data, opts)
        .and_then(|o| o.into_result())
        .map_err(|e| e.to_string())?;
    let (score, _) = test_score(cfg, &data, &out.best).map_err(|e| e.to_string())?;
    Ok((score, out.best_iteration))
}

/// Trains and tests every config under every seed, in parallel. A failed
/// run is recorded in its entry and does not stop the others.
pub fn run_suite(configs: &[ExperimentConfig], seeds: &[u64], out_dir: Option<PathBuf>) -> Vec<SuiteEntry> {
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cfg = ExperimentConfig {
                seed,
                ..configs[c].clone()
            };
            let dir = out_dir
                .as_ref()
                .map(|d| d.join(format!("{c}-{}-{}-s{seed}", cfg.model, cfg.controller)));
            let res = run_one(&cfg, dir);
            SeedRun {
                seed,
                best_iteration: res.as_ref().map_or(0, |r| r.1),
                score: res.map(|r| r.0),
            }
        })
        .collect();
    configs
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let runs: Vec<SeedRun> = results[c * seeds.len()..(c + 1) * seeds.len()].to_vec();
            let ok: Vec<f64> = runs.iter().filter_map(|r| r.score.clone().ok()).collect();
            let (mean, solved) = aggregate(&ok);
            SuiteEntry {
                config: cfg.clone(),
                failed: runs.len() - ok.len(),
                runs,
                mean,
                solved,
            }
        })
        .collect()
}

/// Plain-text report: one line per config.
pub fn format_report(entries: &[SuiteEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let mean = e.mean.map_or("n/a".to_string(), |m| format!("{m:.4}"));
        out.push_str(&format!(
            "{}\tmean={mean}\tsolved={}/{}\tfailed={}\n",
            e.config.summary(),
            e.solved,
            e.runs.len(),
            e.failed
        ));
        for r in &e.runs {
            match &r.score {
                Ok(s) => out.push_str(&format!("  seed={}\terror={s:.4}\tbest_iteration={}\n", r.seed, r.best_iteration)),
                Err(msg) => out.push_str(&format!("  seed={}\tfailed: {msg}\n", r.seed)),
            }
        }
    }
    out
}
