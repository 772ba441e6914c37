use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{argmax, LossKind, Model, Prediction};
use crate::tasks::TaskSample;

/// Anything that maps an episode to per-step output probabilities.
pub trait Predictor: Sync {
    fn probabilities(&self, sample: &TaskSample) -> Result<Vec<Vec<f64>>>;
}

/// A model scored under one loss kind.
#[derive(Clone, Copy, Debug)]
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub kind: LossKind,
}

impl Predictor for ModelPredictor<'_> {
    fn probabilities(&self, sample: &TaskSample) -> Result<Vec<Vec<f64>>> {
        Ok(self.model.predict(sample, self.kind)?.probs)
    }
}

/// Wrong bits over masked bits for one sample, thresholding at 0.5.
pub fn sample_bit_error(probs: &[Vec<f64>], sample: &TaskSample) -> f64 {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (t, y) in sample.masked_targets() {
        for (p, &b) in probs[t].iter().zip(y) {
            total += 1;
            if (*p > 0.5) != (b > 0.5) {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}

/// Mean per-sample bit error, in percent.
pub fn evaluate_bit_error<P: Predictor>(predictor: &P, samples: &[TaskSample]) -> Result<f64> {
    let errs = samples
        .par_iter()
        .map(|s| Ok(sample_bit_error(&predictor.probabilities(s)?, s)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&errs) * 100.0)
}

/// Per-question argmax errors for one sample.
pub fn question_errors(probs: &[Vec<f64>], sample: &TaskSample) -> Vec<bool> {
    sample
        .masked_targets()
        .map(|(t, y)| argmax(&probs[t]) != argmax(y))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BabiReport {
    /// Error percent per task id.
    pub per_task: BTreeMap<u8, f64>,
    pub questions: BTreeMap<u8, usize>,
    /// Unweighted mean over tasks.
    pub mean: f64,
}

/// Per-task question error rates; `samples` pairs each episode with its task.
pub fn evaluate_babi_error<P: Predictor>(predictor: &P, samples: &[(u8, TaskSample)]) -> Result<BabiReport> {
    let per_sample = samples
        .par_iter()
        .map(|(task, s)| Ok((*task, question_errors(&predictor.probabilities(s)?, s))))
        .collect::<Result<Vec<_>>>()?;
    Ok(babi_report(per_sample))
}

pub fn babi_report(per_sample: impl IntoIterator<Item = (u8, Vec<bool>)>) -> BabiReport {
    let mut wrong: BTreeMap<u8, usize> = BTreeMap::new();
    let mut questions: BTreeMap<u8, usize> = BTreeMap::new();
    for (task, errs) in per_sample {
        *wrong.entry(task).or_default() += errs.iter().filter(|&&e| e).count();
        *questions.entry(task).or_default() += errs.len();
    }
    let per_task: BTreeMap<u8, f64> = questions
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(&t, &n)| (t, 100.0 * wrong[&t] as f64 / n as f64))
        .collect();
    let rates: Vec<f64> = per_task.values().copied().collect();
    BabiReport {
        per_task,
        questions,
        mean: mean(&rates),
    }
}

/// Loss and predictions for every sample, in input order.
pub fn predict_all(model: &Model, samples: &[TaskSample], kind: LossKind) -> Result<Vec<Prediction>> {
    samples.par_iter().map(|s| model.predict(s, kind)).collect()
}

/// Mean masked loss and error percent (bit error or question error).
pub fn validation_scores(model: &Model, samples: &[TaskSample], kind: LossKind) -> Result<(f64, f64)> {
    let preds = predict_all(model, samples, kind)?;
    let losses: Vec<f64> = preds.iter().map(|p| p.loss).collect();
    let err = match kind {
        LossKind::Bits => {
            let errs: Vec<f64> = preds
                .iter()
                .zip(samples)
                .map(|(p, s)| sample_bit_error(&p.probs, s))
                .collect();
            100.0 * mean(&errs)
        }
        LossKind::Class => {
            let mut wrong = 0usize;
            let mut total = 0usize;
            for (p, s) in preds.iter().zip(samples) {
                let errs = question_errors(&p.probs, s);
                wrong += errs.iter().filter(|&&e| e).count();
                total += errs.len();
            }
            if total == 0 {
                0.0
            } else {
                100.0 * wrong as f64 / total as f64
            }
        }
    };
    Ok((mean(&losses), err))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
