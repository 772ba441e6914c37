//! Per-step trace dumps: inputs, outputs, targets, and head weightings.
//!
//! Layout: a header line `# <config summary>`, then one tab-separated record
//! per step with `key=values` fields; arrays are space-separated with six
//! significant digits.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::memory::{check_simplex, check_substochastic, MemoryKind};
use crate::model::{probabilities, LossKind, Model};
use crate::tasks::TaskSample;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub input: Vec<f64>,
    pub probs: Vec<f64>,
    /// Present only on masked steps.
    pub target: Option<Vec<f64>>,
    pub reads: Vec<Vec<f64>>,
    pub write: Vec<f64>,
}

pub fn trace_records(model: &Model, sample: &TaskSample, kind: LossKind) -> Result<Vec<TraceRecord>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let ep = model.unroll(&mut tape, &bound, sample, kind)?;
    Ok((0..sample.len())
        .map(|t| {
            let st = &ep.states[t].memory;
            TraceRecord {
                input: sample.inputs[t].clone(),
                probs: probabilities(tape.value(ep.logits[t]).data(), kind),
                target: sample.mask[t].then(|| sample.targets[t].clone()),
                reads: st
                    .read_weights
                    .iter()
                    .map(|&w| tape.value(w).data().to_vec())
                    .collect(),
                write: tape.value(st.write_weight).data().to_vec(),
            }
        })
        .collect())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.5e}")).collect::<Vec<_>>().join(" ")
}

pub fn format_trace(header: &str, records: &[TraceRecord]) -> String {
    let mut out = format!("# {header}\n");
    for (t, r) in records.iter().enumerate() {
        out.push_str(&format!("step={t}\tinput={}\tprobs={}", join(&r.input), join(&r.probs)));
        match &r.target {
            Some(y) => out.push_str(&format!("\ttarget={}", join(y))),
            None => out.push_str("\ttarget=-"),
        }
        for (i, w) in r.reads.iter().enumerate() {
            out.push_str(&format!("\tread{i}={}", join(w)));
        }
        out.push_str(&format!("\twrite={}\n", join(&r.write)));
    }
    out
}

/// Parses [`format_trace`] output into its header and records.
pub fn parse_trace(text: &str) -> Result<(String, Vec<TraceRecord>)> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<trace>".into(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix("# "))
        .ok_or_else(|| bad(1, "missing `# ` header".into()))?
        .to_string();
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let arr = |v: &str| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|x| x.parse().map_err(|_| bad(lineno, format!("bad number `{x}`"))))
                .collect()
        };
        let mut rec = TraceRecord {
            input: vec![],
            probs: vec![],
            target: None,
            reads: vec![],
            write: vec![],
        };
        for field in line.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(lineno, format!("field `{field}` lacks `=`")))?;
            match k {
                "step" => {}
                "input" => rec.input = arr(v)?,
                "probs" => rec.probs = arr(v)?,
                "target" => rec.target = (v != "-").then(|| arr(v)).transpose()?,
                "write" => rec.write = arr(v)?,
                k if k.starts_with("read") => rec.reads.push(arr(v)?),
                other => return Err(bad(lineno, format!("unknown field `{other}`"))),
            }
        }
        records.push(rec);
    }
    Ok((header, records))
}

pub fn dump_trace(path: &Path, header: &str, records: &[TraceRecord]) -> Result<()> {
    fs::write(path, format_trace(header, records))?;
    Ok(())
}

/// Re-checks the weighting invariants on every record; printed values carry
/// six digits, so sums are checked to `tol`.
pub fn check_trace(records: &[TraceRecord], kind: MemoryKind, tol: f64) -> std::result::Result<(), String> {
    for (t, r) in records.iter().enumerate() {
        for w in r.reads.iter().chain(std::iter::once(&r.write)) {
            let res = match kind {
                MemoryKind::Ntm => check_simplex(w, tol),
                MemoryKind::Dnc => check_substochastic(w, tol),
            };
            res.map_err(|e| format!("step {t}: {e}"))?;
        }
    }
    Ok(())
}

/// Mean over `t < len` of `sum_j min(write[t][j], read0[len + 1 + t][j])`:
/// how closely the first read head revisits, during the answer phase, the
/// slots written during input.
pub fn copy_overlap(records: &[TraceRecord], len: usize) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let total: f64 = (0..len)
        .map(|t| {
            let w = &records[t].write;
            let r = &records[len + 1 + t].reads[0];
            w.iter().zip(r).map(|(a, b)| a.min(*b)).sum::<f64>()
        })
        .sum();
    total / len as f64
}
