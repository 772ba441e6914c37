//! One pass/fail line per acceptance criterion, written straight to stdout
//! so it shows up even when the test harness captures output.

mod common;

use std::io::Write as _;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use common::{gradient_check, random_model, random_sample, random_tensor, rng, CheckLoss};
use mann::controllers::{controller_forward, ControllerDims, ControllerKind, ControllerParams, ControllerState};
use mann::dnc::{allocation, link_update};
use mann::graph::{clip_global_norm, param_count, ParamSet, RmsProp, Tape, Tensor};
use mann::harness::trace::copy_overlap;
use mann::harness::train::{load_model, test_score, METRICS_FILE};
use mann::harness::{trace_records, train, DataSource, ExperimentConfig, TrainOptions};
use mann::memory::{MemoryKind, MemoryState};
use mann::model::{LossKind, Model};
use mann::tasks::{sample_rng, BabiCorpus, Split, TaskSample, ToyTask, ToyTaskSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn report(id: &str, ok: bool, detail: &str) {
    let line = format!("criterion {id}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn info(id: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id}: info {detail}").unwrap();
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut failures = Vec::new();
    for (memory, dims) in [(MemoryKind::Ntm, (16, 8, 4, 1)), (MemoryKind::Dnc, (16, 8, 4, 2))] {
        for (i, kind) in ControllerKind::ALL.into_iter().enumerate() {
            let seed = 1000 + i as u64;
            let model = random_model(memory, kind, dims, seed);
            let sample = random_sample(4, 9, 8, seed + 50);
            let rep = gradient_check(&model, &sample, CheckLoss::Projection(seed), 1e-5, 1e-4, 1e-7, 1e-6);
            checked += rep.checked;
            worst = worst.max(rep.worst_rel);
            failures.extend(rep.failures.into_iter().map(|f| format!("{memory}/{kind} {f}")));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 120.0;
    report(
        "1",
        ok,
        &format!(
            "{checked} gradient entries, {} mismatches, worst rel err {worst:.2e}, {secs:.1}s",
            failures.len()
        ),
    );
    assert!(ok, "{:?}", &failures[..failures.len().min(5)]);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_output_path_is_not_recurrent() {
    let dims = ControllerDims {
        input: 9,
        reads: 20,
        hidden: 16,
    };
    let mut r = rng(2);
    let mut problems = Vec::new();
    let mut trials = 0;
    for kind in [ControllerKind::EnPnr, ControllerKind::LstmPnr] {
        let mut params = ParamSet::new();
        let cp = ControllerParams::register(kind, dims, &mut params, &mut r);
        common::randomize(&mut params, &mut r, 0.5);
        for _ in 0..50 {
            trials += 1;
            let x = random_tensor(&mut r, 9, 1, -1.0, 1.0);
            let rp = random_tensor(&mut r, 20, 1, -1.0, 1.0);
            let h = random_tensor(&mut r, 16, 1, -1.0, 1.0);
            let c = random_tensor(&mut r, 16, 1, -1.0, 1.0);
            let cot = random_tensor(&mut r, 16, 1, -1.0, 1.0);
            let noise_h = random_tensor(&mut r, 16, 1, -1.0, 1.0);
            let noise_c = random_tensor(&mut r, 16, 1, -1.0, 1.0);

            let run = |h: &Tensor, c: &Tensor| {
                let mut tape = Tape::new();
                let vars = cp.bind(&mut tape, &params);
                let xv = tape.constant(x.clone());
                let rv = tape.constant(rp.clone());
                let state = ControllerState {
                    h: tape.constant(h.clone()),
                    c: kind.is_lstm().then(|| tape.constant(c.clone())),
                };
                let out = controller_forward(&mut tape, xv, rv, &state, &vars).unwrap();
                let cv = tape.constant(cot.clone());
                let prod = tape.hadamard(out.h_out, cv).unwrap();
                let loss = tape.sum(prod).unwrap();
                let grads = tape.gradients(loss).unwrap();
                let gh = grads.wrt_dense(state.h, 16);
                let gc = state.c.map(|v| grads.wrt_dense(v, 16));
                (tape.value(out.h_out).clone(), gh, gc)
            };
            let (h_out, gh, gc) = run(&h, &c);
            if gh.iter().chain(gc.iter().flatten()).any(|&g| g != 0.0) {
                problems.push(format!("{kind}: nonzero gradient into previous state"));
            }
            let add = |a: &Tensor, b: &Tensor| {
                Tensor::column(a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
            };
            let (perturbed, _, _) = run(&add(&h, &noise_h), &add(&c, &noise_c));
            let same = h_out
                .data()
                .iter()
                .zip(perturbed.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                problems.push(format!("{kind}: h_out changed under state perturbation"));
            }
        }
    }
    let ok = problems.is_empty();
    report(
        "2",
        ok,
        &format!("en-pnr and lstm-pnr, {trials} random states, {} violations", problems.len()),
    );
    assert!(ok, "{problems:?}");
}

// ---------------------------------------------------------------- 3

fn controller_count(kind: ControllerKind, input: usize, reads: usize, hidden: usize) -> usize {
    let mut params = ParamSet::new();
    ControllerParams::register(kind, ControllerDims { input, reads, hidden }, &mut params, &mut rng(0));
    param_count(&params)
}

#[test]
fn criterion_3_parameter_parity() {
    let mut triples = vec![(9, 20, 128)];
    let mut r = rng(3);
    for _ in 0..5 {
        triples.push((r.gen_range(1..40), r.gen_range(1..80), r.gen_range(1..200)));
    }
    let mut lines = Vec::new();
    let mut ok = true;
    for &(i, rw, h) in &triples {
        let en = controller_count(ControllerKind::En, i, rw, h);
        let en_p = controller_count(ControllerKind::EnPnr, i, rw, h);
        let lstm = controller_count(ControllerKind::Lstm, i, rw, h);
        let lstm_p = controller_count(ControllerKind::LstmPnr, i, rw, h);
        ok &= en == en_p && lstm == lstm_p;
        lines.push(format!("({i},{rw},{h}): en {en}/{en_p} lstm {lstm}/{lstm_p}"));
    }
    // hand count for the first triple: H (I + RW + H) + H
    let en_ref = 128 * (9 + 20 + 128) + 128;
    ok &= controller_count(ControllerKind::En, 9, 20, 128) == en_ref && en_ref == 20224;
    report("3", ok, &lines.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------- 4

fn weights(tape: &Tape, state: &MemoryState) -> Vec<Vec<f64>> {
    std::iter::once(state.write_weight)
        .chain(state.read_weights.iter().copied())
        .map(|w| tape.value(w).data().to_vec())
        .collect()
}

/// Returns the number of steps checked and any violation messages.
fn rollout_violations(memory: MemoryKind, total_steps: usize) -> (usize, Vec<String>) {
    let dims = match memory {
        MemoryKind::Ntm => (16, 8, 4, 1),
        MemoryKind::Dnc => (16, 8, 4, 2),
    };
    let mut bad = Vec::new();
    let mut steps = 0;
    let mut episode = 0;
    while steps < total_steps {
        let kind = ControllerKind::ALL[episode % ControllerKind::ALL.len()];
        let model = random_model(memory, kind, dims, 400 + episode as u64);
        let mut r = rng(900 + episode as u64);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut state = model.initial_state(&mut tape);
        for _ in 0..100.min(total_steps - steps) {
            let x = tape.constant(random_tensor(&mut r, 9, 1, -3.0, 3.0));
            state = model.step(&mut tape, &bound, x, &state).unwrap().state;
            steps += 1;
            let mem = &state.memory;
            for w in weights(&tape, mem) {
                let s: f64 = w.iter().sum();
                match memory {
                    MemoryKind::Ntm => {
                        if (s - 1.0).abs() > 1e-9 || w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                            bad.push(format!("step {steps}: ntm weighting sum {s}"));
                        }
                    }
                    MemoryKind::Dnc => {
                        if s > 1.0 + 1e-6 || w.iter().any(|&x| x < 0.0) {
                            bad.push(format!("step {steps}: dnc weighting sum {s}"));
                        }
                    }
                }
            }
            if let Some(d) = &mem.dnc {
                let u = tape.value(d.usage).data();
                if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    bad.push(format!("step {steps}: usage out of range"));
                }
                let l = tape.value(d.link);
                let n = l.rows();
                for i in 0..n {
                    if l.get(i, i) != 0.0 {
                        bad.push(format!("step {steps}: link diagonal {}", l.get(i, i)));
                    }
                    let row: f64 = (0..n).map(|j| l.get(i, j)).sum();
                    let col: f64 = (0..n).map(|j| l.get(j, i)).sum();
                    if row > 1.0 + 1e-6 || col > 1.0 + 1e-6 {
                        bad.push(format!("step {steps}: link row/col sum {row}/{col}"));
                    }
                    for j in 0..n {
                        let v = l.get(i, j);
                        if !(0.0..=1.0 + 1e-6).contains(&v) {
                            bad.push(format!("step {steps}: link entry {v}"));
                        }
                    }
                }
            }
        }
        episode += 1;
    }
    (steps, bad)
}

#[test]
fn criterion_4_addressing_invariants() {
    let (ntm_steps, ntm_bad) = rollout_violations(MemoryKind::Ntm, 1000);
    let (dnc_steps, dnc_bad) = rollout_violations(MemoryKind::Dnc, 1000);
    let ok = ntm_bad.is_empty() && dnc_bad.is_empty();
    report(
        "4",
        ok,
        &format!(
            "ntm {ntm_steps} steps {} violations; dnc {dnc_steps} steps {} violations",
            ntm_bad.len(),
            dnc_bad.len()
        ),
    );
    assert!(ok, "{:?} {:?}", &ntm_bad[..ntm_bad.len().min(3)], &dnc_bad[..dnc_bad.len().min(3)]);
}

// ---------------------------------------------------------------- 5

/// `a[j] = (1 - u[j]) * prod of u[i] over every slot i ranked before j`,
/// where rank is ascending usage with ties broken by index.
fn allocation_oracle(u: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|j| {
            let mut a = 1.0 - u[j];
            for i in 0..u.len() {
                if u[i] < u[j] || (u[i] == u[j] && i < j) {
                    a *= u[i];
                }
            }
            a
        })
        .collect()
}

fn link_oracle(l: &Tensor, w: &[f64], p: &[f64]) -> Tensor {
    let n = w.len();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.set(i, j, (1.0 - w[i] - w[j]) * l.get(i, j) + w[i] * p[j]);
            }
        }
    }
    out
}

fn substochastic(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..=n).map(|_| r.gen_range(0.0..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw[..n].iter().map(|x| x / s).collect()
}

/// Expected toy episode built by direct list manipulation from the content
/// recovered out of a generated sample.
fn toy_reference(task: ToyTask, sample: &TaskSample, m_max: usize) -> TaskSample {
    // the marker is the last nonzero input; at M = M_max the count step looks the same
    let end = sample
        .inputs
        .iter()
        .rposition(|x| x.iter().any(|&v| v != 0.0))
        .expect("end marker");
    assert_eq!(sample.inputs[end][8], 1.0);
    let (t, m) = if task == ToyTask::RepeatCopy {
        (end - 1, (sample.inputs[end - 1][8] * m_max as f64).round() as usize)
    } else {
        (end, 1)
    };
    let content: Vec<Vec<f64>> = sample.inputs[..t].iter().map(|x| x[..8].to_vec()).collect();
    let answer: Vec<Vec<f64>> = match task {
        ToyTask::Copy => content.clone(),
        ToyTask::Reverse => content.iter().rev().cloned().collect(),
        ToyTask::BigramFlip => content
            .chunks(2)
            .flat_map(|pair| pair.iter().rev().cloned().collect::<Vec<_>>())
            .collect(),
        ToyTask::OddFirst => {
            let odd = content.iter().step_by(2);
            let even = content.iter().skip(1).step_by(2);
            odd.chain(even).cloned().collect()
        }
        ToyTask::RepeatCopy => {
            let mut v = Vec::new();
            for _ in 0..m {
                for c in &content {
                    let mut y = c.clone();
                    y.push(0.0);
                    v.push(y);
                }
            }
            let mut marker = vec![0.0; 9];
            marker[8] = 1.0;
            v.push(marker);
            v
        }
        ToyTask::PrioritySort => {
            let value = |b: &[f64]| b.iter().fold(0u32, |acc, &x| acc * 2 + x as u32);
            let mut v = content.clone();
            v.sort_by_key(|b| value(b));
            v
        }
    };
    let out_dim = if task == ToyTask::RepeatCopy { 9 } else { 8 };
    let mut inputs: Vec<Vec<f64>> = content
        .iter()
        .map(|c| c.iter().copied().chain([0.0]).collect())
        .collect();
    if task == ToyTask::RepeatCopy {
        let mut count = vec![0.0; 9];
        count[8] = m as f64 / m_max as f64;
        inputs.push(count);
    }
    let mut marker = vec![0.0; 9];
    marker[8] = 1.0;
    inputs.push(marker);
    let lead = inputs.len();
    for _ in 0..answer.len() {
        inputs.push(vec![0.0; 9]);
    }
    let mut targets = vec![vec![0.0; out_dim]; lead];
    targets.extend(answer);
    let mask = (0..targets.len()).map(|i| i >= lead).collect();
    TaskSample {
        inputs,
        targets,
        mask,
    }
}

#[test]
fn criterion_5_oracle_equivalence() {
    let mut r = rng(5);
    let mut alloc_worst = 0.0f64;
    let mut alloc_draws = 0;
    for n in 2..=6 {
        for d in 0..10_000 {
            // every fifth draw is quantized so that ties occur
            let u: Vec<f64> = (0..n)
                .map(|_| {
                    if d % 5 == 0 {
                        f64::from(r.gen_range(0..4u8)) / 3.0
                    } else {
                        r.gen_range(0.0..=1.0)
                    }
                })
                .collect();
            let mut tape = Tape::new();
            let uv = tape.constant(Tensor::column(u.clone()));
            let a = allocation(&mut tape, uv).unwrap();
            for (x, y) in tape.value(a).data().iter().zip(allocation_oracle(&u)) {
                alloc_worst = alloc_worst.max((x - y).abs());
            }
            alloc_draws += 1;
        }
    }

    let mut link_worst = 0.0f64;
    for k in 0..1000 {
        let n = 2 + k % 7;
        let w = substochastic(&mut r, n);
        let p = substochastic(&mut r, n);
        let mut l = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    l.set(i, j, r.gen_range(0.0..1.0) / n as f64);
                }
            }
        }
        let mut tape = Tape::new();
        let lv = tape.constant(l.clone());
        let wv = tape.constant(Tensor::column(w.clone()));
        let pv = tape.constant(Tensor::column(p.clone()));
        let out = link_update(&mut tape, lv, wv, pv).unwrap();
        let want = link_oracle(&l, &w, &p);
        for (x, y) in tape.value(out).data().iter().zip(want.data()) {
            link_worst = link_worst.max((x - y).abs());
        }
    }

    let mut toy_mismatch = Vec::new();
    for task in ToyTask::ALL {
        let (t_range, m_range) = if task == ToyTask::RepeatCopy {
            (1..=10, 1..=10)
        } else {
            (1..=20, 1..=10)
        };
        let spec = ToyTaskSpec {
            task,
            t_range,
            m_range,
        };
        let bad = (0..1000u64)
            .filter(|&i| {
                let s = spec.sample(&mut sample_rng(55, Split::Train, i)).unwrap();
                toy_reference(task, &s, 10) != s
            })
            .count();
        if bad > 0 {
            toy_mismatch.push(format!("{task}: {bad}"));
        }
    }

    let ok = alloc_worst <= 1e-12 && link_worst <= 1e-12 && toy_mismatch.is_empty();
    report(
        "5",
        ok,
        &format!(
            "allocation {alloc_draws} draws max err {alloc_worst:.1e}; link 1000 triples max err {link_worst:.1e}; \
             toy 6x1000 samples, mismatches {toy_mismatch:?}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_clipping() {
    let mut ps = ParamSet::new();
    let id = ps.add("g", Tensor::column(vec![0.0, 0.0]));
    ps.get_mut(id).grad_mut().data_mut().copy_from_slice(&[6.0, 8.0]);
    clip_global_norm(&mut ps, 5.0);
    let g = ps.get(id).grad().data().to_vec();
    let ok = g == [3.0, 4.0];
    report("6a", ok, &format!("clip [6, 8] at 5 -> {g:?}"));
    assert!(ok);
}

#[test]
fn criterion_6_rmsprop_first_step() {
    let mut ps = ParamSet::new();
    let id = ps.add("theta", Tensor::column(vec![0.0]));
    ps.get_mut(id).grad_mut().data_mut()[0] = 1.0;
    RmsProp::new(1e-4, 0.9).step(&mut ps);
    let theta = ps.get(id).value().data()[0];
    let expected = -4.5768e-4;
    let ok = (theta - expected).abs() < 1e-8;
    report(
        "6b",
        ok,
        &format!(
            "first step theta = {theta:.6e}, stated value {expected:e}, |diff| {:.2e} (tol 1e-8); \
             -1e-4 / sqrt(0.05 - 0.05^2 + 1e-4) = {:.6e}",
            (theta - expected).abs(),
            -1e-4 / (0.05f64 - 0.0025 + 1e-4).sqrt()
        ),
    );
    assert!(ok, "theta {theta} vs {expected}");
}

// ---------------------------------------------------------------- 7 and 8

struct DeskRun {
    controller: ControllerKind,
    seed: u64,
    test_error: f64,
    best: Model,
    cfg: ExperimentConfig,
}

fn desk_runs() -> &'static [DeskRun] {
    static RUNS: OnceLock<Vec<DeskRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut runs = Vec::new();
        for controller in [ControllerKind::LstmPnr, ControllerKind::Lstm] {
            for seed in 0..3 {
                let cfg = ExperimentConfig {
                    controller,
                    seed,
                    ..ExperimentConfig::desk()
                };
                let data = DataSource::from_config(&cfg).unwrap();
                let out = train(&cfg, &data, TrainOptions::default())
                    .and_then(|o| o.into_result())
                    .unwrap();
                let (test_error, _) = test_score(&cfg, &data, &out.best).unwrap();
                info(
                    "7/8",
                    &format!("{controller} seed {seed}: best iteration {} test bit error {test_error:.4}%", out.best_iteration),
                );
                runs.push(DeskRun {
                    controller,
                    seed,
                    test_error,
                    best: out.best,
                    cfg,
                });
            }
        }
        runs
    })
}

#[test]
fn criterion_7_desk_copy_learning() {
    let runs: Vec<&DeskRun> = desk_runs()
        .iter()
        .filter(|r| r.controller == ControllerKind::LstmPnr)
        .collect();
    let below = runs.iter().filter(|r| r.test_error < 2.0).count();
    let errors: Vec<String> = runs.iter().map(|r| format!("{:.4}%", r.test_error)).collect();

    // the trained model's write and read focus should line up on copy
    let run = runs[0];
    let sample = ToyTaskSpec {
        t_range: 5..=5,
        ..run.cfg.toy_spec().unwrap()
    }
    .sample(&mut sample_rng(run.seed, Split::Probe, 0))
    .unwrap();
    let untrained = Model::new(run.cfg.model_config(None).unwrap(), &mut mann::tasks::init_rng(run.seed)).unwrap();
    let trained_overlap = copy_overlap(&trace_records(&run.best, &sample, LossKind::Bits).unwrap(), 5);
    let untrained_overlap = copy_overlap(&trace_records(&untrained, &sample, LossKind::Bits).unwrap(), 5);
    info(
        "7",
        &format!("copy trace overlap trained {trained_overlap:.4} vs untrained {untrained_overlap:.4}"),
    );

    let ok = below >= 2;
    report(
        "7",
        ok,
        &format!("ntm + lstm-pnr test bit errors {errors:?}, {below}/3 below 2.0%"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_desk_comparative_direction() {
    let mean = |kind| {
        let v: Vec<f64> = desk_runs()
            .iter()
            .filter(|r| r.controller == kind)
            .map(|r| r.test_error)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let pnr = mean(ControllerKind::LstmPnr);
    let base = mean(ControllerKind::Lstm);
    // soft criterion: logged, not enforced
    report(
        "8",
        pnr <= base,
        &format!("(soft) mean test bit error lstm-pnr {pnr:.4}% vs lstm {base:.4}%"),
    );
}

// ---------------------------------------------------------------- 9

fn babi_dir() -> (Option<tempfile::TempDir>, std::path::PathBuf, bool) {
    if let Some(dir) = std::env::var_os("MANN_DATA_DIR").map(std::path::PathBuf::from) {
        if mann::tasks::BabiFile::discover(&dir).is_ok_and(|f| !f.is_empty()) {
            return (None, dir, true);
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    common::write_synthetic_babi(tmp.path(), 1000, 9);
    let path = tmp.path().to_path_buf();
    (Some(tmp), path, false)
}

#[test]
fn criterion_9_babi_pipeline() {
    let start = Instant::now();
    let (_guard, dir, real) = babi_dir();
    let first = BabiCorpus::load_dir(&dir).unwrap();
    let second = BabiCorpus::load_dir(&dir).unwrap();
    let stable = first.vocabulary.words() == second.vocabulary.words()
        && first.question_count() == second.question_count()
        && first.stories.len() == second.stories.len();

    let cfg = ExperimentConfig {
        controller: ControllerKind::LstmPnr,
        iterations: 500,
        validation_interval: 500,
        validation_size: 16,
        data_dir: Some(dir.clone()),
        ..ExperimentConfig::babi()
    };
    let data = DataSource::babi(Arc::new(first.clone()), cfg.validation_size, cfg.seed);
    let mut losses = Vec::new();
    let opts = TrainOptions {
        on_step: Some(Box::new(|_, l| losses.push(l))),
        ..Default::default()
    };
    let outcome = train(&cfg, &data, opts).unwrap();
    let early = losses[..50].iter().sum::<f64>() / 50.0;
    let late = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
    let secs = start.elapsed().as_secs_f64();
    let ok = stable && outcome.diverged.is_none() && losses.len() == 500 && late <= 0.9 * early && secs < 1800.0;
    let source = if real {
        format!("corpus at {}", dir.display())
    } else {
        "SYNTHETIC stand-in corpus (MANN_DATA_DIR not set)".to_string()
    };
    report(
        "9",
        ok,
        &format!(
            "{source}: {} stories, vocabulary {}, {} questions, parses stable {stable}; \
             dnc + lstm-pnr loss first-50 mean {early:.4} last-50 mean {late:.4} ({:.1}% drop), {secs:.0}s",
            first.stories.len(),
            first.vocabulary.len(),
            first.question_count(),
            100.0 * (1.0 - late / early)
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_determinism_and_round_trip() {
    let cfg = ExperimentConfig {
        iterations: 1500,
        validation_interval: 500,
        validation_size: 64,
        wall_clock: false,
        seed: 10,
        ..ExperimentConfig::desk()
    };
    let data = DataSource::from_config(&cfg).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let opts = TrainOptions {
            out_dir: Some(d.path().to_path_buf()),
            ..Default::default()
        };
        train(&cfg, &data, opts).unwrap();
    }
    let csv: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| std::fs::read(d.path().join(METRICS_FILE)).unwrap())
        .collect();
    let same_csv = csv[0] == csv[1] && !csv[0].is_empty();

    let original = train(&cfg, &data, TrainOptions::default()).unwrap().best;
    let path = dirs[0].path().join("probe.ckpt");
    mann::graph::checkpoint::save(&original.params, &path).unwrap();
    let restored = load_model(&cfg, &data, &path).unwrap();
    let spec = cfg.toy_spec().unwrap();
    let mut exact = true;
    for i in 0..16 {
        let s = spec.sample(&mut sample_rng(cfg.seed, Split::Probe, i)).unwrap();
        let a = original.predict(&s, LossKind::Bits).unwrap();
        let b = restored.predict(&s, LossKind::Bits).unwrap();
        exact &= a.loss.to_bits() == b.loss.to_bits()
            && a.probs.iter().flatten().zip(b.probs.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    let ok = same_csv && exact;
    report(
        "10",
        ok,
        &format!("metrics CSVs bit-identical {same_csv}; checkpoint round trip bit-exact on 16 probes {exact}"),
    );
    assert!(ok);
}
