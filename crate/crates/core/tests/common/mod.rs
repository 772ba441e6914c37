#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mann::controllers::ControllerKind;
use mann::graph::{ParamSet, Tape, Tensor, Var};
use mann::memory::MemoryKind;
use mann::model::{LossKind, Model, ModelConfig};
use mann::tasks::TaskSample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overwrites every parameter with uniform noise in `[-scale, scale]`.
pub fn randomize(params: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    for p in params.iter_mut() {
        for v in p.value_mut().data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_model(memory: MemoryKind, controller: ControllerKind, dims: (usize, usize, usize, usize), seed: u64) -> Model {
    let (hidden, slots, width, read_heads) = dims;
    let cfg = ModelConfig {
        memory,
        controller,
        input: 9,
        output: 8,
        hidden,
        slots,
        width,
        read_heads,
    };
    let mut r = rng(seed);
    let mut m = Model::new(cfg, &mut r).unwrap();
    randomize(&mut m.params, &mut r, 0.5);
    m
}

pub fn random_sample(steps: usize, in_dim: usize, out_dim: usize, seed: u64) -> TaskSample {
    let mut r = rng(seed);
    TaskSample {
        inputs: (0..steps)
            .map(|_| (0..in_dim).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect(),
        targets: (0..steps)
            .map(|_| (0..out_dim).map(|_| f64::from(r.gen::<bool>() as u8)).collect())
            .collect(),
        mask: vec![true; steps],
    }
}

/// Scalar objective differentiated by [`gradient_check`].
#[derive(Clone, Copy, Debug)]
pub enum CheckLoss {
    /// The masked training loss.
    Training,
    /// `sum_t <c_t, logits_t>` with fixed random `c_t` drawn from the seed.
    Projection(u64),
}

fn loss_on_tape(model: &Model, sample: &TaskSample, loss: CheckLoss) -> (Tape, Var) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let ep = model.unroll(&mut tape, &bound, sample, LossKind::Bits).unwrap();
    let out = match loss {
        CheckLoss::Training => ep.loss,
        CheckLoss::Projection(seed) => {
            let mut r = rng(seed);
            let mut terms = Vec::new();
            for &l in &ep.logits {
                let n = tape.shape(l).0;
                let c = tape.constant(random_tensor(&mut r, n, 1, -1.0, 1.0));
                let prod = tape.hadamard(l, c).unwrap();
                terms.push(tape.sum(prod).unwrap());
            }
            let all = tape.concat_rows(&terms).unwrap();
            tape.sum(all).unwrap()
        }
    };
    (tape, out)
}

pub fn episode_loss(model: &Model, sample: &TaskSample, loss: CheckLoss) -> f64 {
    let (tape, l) = loss_on_tape(model, sample, loss);
    tape.value(l).item()
}

/// Worst gradient mismatch across all parameters of `model`.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
}

/// Central differences with step `h` against the tape gradient, using
/// relative error `< rel_tol`, or absolute error `< abs_tol` where both
/// gradients are below `small`.
pub fn gradient_check(
    model: &Model,
    sample: &TaskSample,
    loss: CheckLoss,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
    small: f64,
) -> GradReport {
    let mut analytic = model.clone();
    analytic.params.zero_grads();
    let (tape, l) = loss_on_tape(model, sample, loss);
    tape.backward(l, &mut analytic.params).unwrap();

    let mut probe = model.clone();
    let mut report = GradReport::default();
    for id in model.params.ids() {
        let name = model.params.get(id).name().to_string();
        for k in 0..model.params.get(id).len() {
            let orig = model.params.get(id).value().data()[k];
            probe.params.get_mut(id).value_mut().data_mut()[k] = orig + h;
            let plus = episode_loss(&probe, sample, loss);
            probe.params.get_mut(id).value_mut().data_mut()[k] = orig - h;
            let minus = episode_loss(&probe, sample, loss);
            probe.params.get_mut(id).value_mut().data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let g = analytic.params.get(id).grad().data()[k];
            report.checked += 1;
            let ok = if g.abs() < small && numeric.abs() < small {
                (g - numeric).abs() < abs_tol
            } else {
                let rel = (g - numeric).abs() / g.abs().max(numeric.abs());
                report.worst_rel = report.worst_rel.max(rel);
                rel < rel_tol
            };
            if !ok {
                report
                    .failures
                    .push(format!("{name}[{k}]: analytic {g:e} numeric {numeric:e}"));
            }
        }
    }
    report
}

/// Central-difference vector-Jacobian check for a single primitive built by
/// `f` from the given inputs, against a random cotangent.
pub fn primitive_check<F>(inputs: &[Tensor], f: F, seed: u64) -> Result<(), String>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape0, _, out0) = eval(inputs);
    let shape = tape0.shape(out0);
    let mut r = rng(seed);
    let cot = Tensor::new(shape.0, shape.1, (0..shape.0 * shape.1).map(|_| r.gen_range(-1.0..1.0)).collect());

    // scalarize with the fixed cotangent: loss = sum(out * cot)
    let scalar = |vals: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let (mut tape, vars, out) = eval(vals);
        let c = tape.constant(cot.clone());
        let prod = tape.hadamard(out, c).unwrap();
        let loss = tape.sum(prod).unwrap();
        (tape, vars, loss)
    };
    let (tape, vars, loss) = scalar(inputs);
    let grads = tape.gradients(loss).map_err(|e| e.to_string())?;
    let h = 1e-5;
    for (i, x) in inputs.iter().enumerate() {
        let g = grads.wrt_dense(vars[i], x.len());
        for (k, &gk) in g.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let (tp, _, lp) = scalar(&plus);
            let (tm, _, lm) = scalar(&minus);
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
            let ok = if gk.abs() < 1e-6 && numeric.abs() < 1e-6 {
                (gk - numeric).abs() < 1e-7
            } else {
                (gk - numeric).abs() / gk.abs().max(numeric.abs()) < 1e-4
            };
            if !ok {
                return Err(format!("input {i} entry {k}: analytic {gk} numeric {numeric}"));
            }
        }
    }
    Ok(())
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect())
}

const PEOPLE: [&str; 6] = ["Mary", "John", "Sandra", "Daniel", "Julie", "Fred"];
const PLACES: [&str; 6] = ["bathroom", "kitchen", "garden", "office", "hallway", "bedroom"];
const MOVES: [&str; 4] = ["moved to", "went to", "journeyed to", "travelled to"];
const TIMES: [&str; 4] = ["Yesterday", "This morning", "This afternoon", "This evening"];
const DIRS: [(&str, &str); 4] = [
    ("north", "south"),
    ("south", "north"),
    ("east", "west"),
    ("west", "east"),
];

fn story_lines(task: u8, r: &mut ChaCha8Rng) -> Vec<String> {
    let mut lines: Vec<String> = Vec::new();
    let mut id = 0;
    let mut push = |lines: &mut Vec<String>, text: String| {
        id += 1;
        lines.push(format!("{id} {text}"));
        id
    };
    let pick = |r: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(r).unwrap();
    match task {
        1 | 11 => {
            let mut at: Vec<(&str, &str, usize)> = Vec::new();
            for _ in 0..5 {
                for _ in 0..2 {
                    let who = pick(r, &PEOPLE);
                    let place = pick(r, &PLACES);
                    let line = if task == 11 && at.last().is_some_and(|l| l.0 == who) {
                        let pron = if matches!(who, "Mary" | "Sandra" | "Julie") { "she" } else { "he" };
                        format!("Then {pron} {} the {place}.", pick(r, &MOVES))
                    } else {
                        format!("{who} {} the {place}.", pick(r, &MOVES))
                    };
                    let lid = push(&mut lines, line);
                    at.retain(|a| a.0 != who);
                    at.push((who, place, lid));
                }
                let (who, place, lid) = *at.choose(r).unwrap();
                push(&mut lines, format!("Where is {who}? \t{place}\t{lid}"));
            }
        }
        4 => {
            let a = pick(r, &PLACES);
            let mut b = pick(r, &PLACES);
            while b == a {
                b = pick(r, &PLACES);
            }
            let (d, opp) = *DIRS.choose(r).unwrap();
            push(&mut lines, format!("The {a} is {d} of the {b}."));
            push(&mut lines, format!("The {b} is {opp} of the {a}."));
            if r.gen() {
                push(&mut lines, format!("What is {d} of the {b}?\t{a}\t1"));
            } else {
                push(&mut lines, format!("What is the {b} {opp} of?\t{a}\t2"));
            }
        }
        9 | 10 => {
            for _ in 0..5 {
                let who = pick(r, &PEOPLE);
                let place = pick(r, &PLACES);
                let mut other = pick(r, &PLACES);
                while other == place {
                    other = pick(r, &PLACES);
                }
                let (fact, answer, asked) = match (task, r.gen_range(0..3)) {
                    (9, 0) => (format!("{who} is in the {place}."), "yes", place),
                    (9, 1) => (format!("{who} is no longer in the {place}."), "no", place),
                    (9, _) => (format!("{who} is not in the {place}."), "no", place),
                    (_, 0) => (format!("{who} is either in the {place} or the {other}."), "maybe", place),
                    (_, 1) => (format!("{who} is in the {place}."), "yes", place),
                    _ => (format!("{who} is in the {place}."), "no", other),
                };
                let lid = push(&mut lines, fact);
                push(&mut lines, format!("Is {who} in the {asked}? \t{answer}\t{lid}"));
            }
        }
        14 => {
            let who = pick(r, &PEOPLE);
            let mut places: Vec<&str> = PLACES.to_vec();
            places.shuffle(r);
            let mut order: Vec<usize> = (0..4).collect();
            order.shuffle(r);
            for &k in &order {
                push(&mut lines, format!("{} {who} went to the {}.", TIMES[k], places[k]));
            }
            let k = r.gen_range(1..4);
            push(
                &mut lines,
                format!("Where was {who} before the {}? \t{}\t1", places[k], places[k - 1]),
            );
        }
        _ => unreachable!("joint task ids only"),
    }
    lines
}

/// Writes a bAbI-format corpus for the six joint tasks into `dir`, with the
/// distributed file names; each train file holds `stories` stories.
pub fn write_synthetic_babi(dir: &Path, stories: usize, seed: u64) {
    let names = [
        (1u8, "single-supporting-fact"),
        (4, "two-arg-relations"),
        (9, "simple-negation"),
        (10, "indefinite-knowledge"),
        (11, "basic-coreference"),
        (14, "time-reasoning"),
    ];
    for (task, name) in names {
        for (split, count) in [("train", stories), ("test", stories / 10 + 1)] {
            let mut r = rng(seed ^ (u64::from(task) << 8) ^ u64::from(split == "test"));
            let mut body = String::new();
            for _ in 0..count {
                for l in story_lines(task, &mut r) {
                    writeln!(body, "{l}").unwrap();
                }
            }
            fs::write(dir.join(format!("qa{task}_{name}_{split}.txt")), body).unwrap();
        }
    }
}
