//! A full memory-augmented network: controller, memory heads, and output
//! projection, stepped over an episode.

use rand::Rng;

use crate::controllers::{
    compose_model_output, controller_forward, ControllerDims, ControllerKind, ControllerParams,
    ControllerState, ControllerVars,
};
use crate::dnc::{
    allocation, forward_backward, link_update, precedence_update, read_weighting, retention,
    usage_update, write_weighting, DncDynamicState,
};
use crate::error::{Error, Result};
use crate::graph::{glorot_uniform, ParamId, ParamSet, Tape, Tensor, Var};
use crate::memory::{
    memory_read, memory_write, parse_interface, InterfaceLayout, InterfaceVector, MemoryKind,
    MemoryState,
};
use crate::ntm::{content_address, ntm_address};
use crate::tasks::TaskSample;

/// How logits are scored against targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Independent sigmoid cross-entropy per output bit.
    Bits,
    /// Softmax cross-entropy against a one-hot target.
    Class,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub memory: MemoryKind,
    pub controller: ControllerKind,
    pub input: usize,
    pub output: usize,
    pub hidden: usize,
    pub slots: usize,
    pub width: usize,
    pub read_heads: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input", self.input),
            ("output", self.output),
            ("hidden", self.hidden),
            ("slots", self.slots),
            ("width", self.width),
            ("read_heads", self.read_heads),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    controller: ControllerParams,
    layout: InterfaceLayout,
    heads_w: ParamId,
    heads_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Model parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub controller: ControllerVars,
    pub heads_w: Var,
    pub heads_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub controller: ControllerState,
    pub memory: MemoryState,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: Var,
    pub h_out: Var,
    pub state: ModelState,
}

/// Everything recorded while unrolling one episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub logits: Vec<Var>,
    /// State after each step.
    pub states: Vec<ModelState>,
    pub loss: Var,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let reads = config.read_heads * config.width;
        let dims = ControllerDims {
            input: config.input,
            reads,
            hidden: config.hidden,
        };
        let controller = ControllerParams::register(config.controller, dims, &mut params, rng);
        let layout = InterfaceLayout::new(config.memory, config.width, config.read_heads);
        let (heads_w, heads_b) = layout.register(config.hidden, &mut params, rng);
        let fan_in = config.hidden + reads;
        let out_w = params.add(
            "output.W_y",
            glorot_uniform(rng, config.output, fan_in, fan_in, config.output),
        );
        let out_b = params.add("output.b_y", Tensor::zeros(config.output, 1));
        Ok(Model {
            config,
            params,
            controller,
            layout,
            heads_w,
            heads_b,
            out_w,
            out_b,
        })
    }

    pub fn layout(&self) -> &InterfaceLayout {
        &self.layout
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            controller: self.controller.bind(tape, &self.params),
            heads_w: tape.param(&self.params, self.heads_w),
            heads_b: tape.param(&self.params, self.heads_b),
            out_w: tape.param(&self.params, self.out_w),
            out_b: tape.param(&self.params, self.out_b),
        }
    }

    pub fn initial_state(&self, tape: &mut Tape) -> ModelState {
        let c = &self.config;
        ModelState {
            controller: ControllerState::zeros(tape, c.controller, c.hidden),
            memory: MemoryState::initial(tape, c.memory, c.slots, c.width, c.read_heads),
        }
    }

    /// One time step: controller, write against `M_{t-1}`, reads against
    /// `M_t`, then the output projection of `[h_out ; r_t]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        x: Var,
        state: &ModelState,
    ) -> Result<StepOutput> {
        let prev = &state.memory;
        let ctl = controller_forward(tape, x, prev.reads, &state.controller, &bound.controller)?;
        let ifc = parse_interface(tape, ctl.h_control, &self.layout, bound.heads_w, bound.heads_b)?;
        let memory = match ifc {
            InterfaceVector::Ntm(ifc) => {
                let ww = ntm_address(tape, prev.memory, &ifc.write, prev.write_weight)?;
                let m = memory_write(tape, prev.memory, ww, ifc.erase, ifc.add)?;
                let mut read_weights = Vec::with_capacity(ifc.reads.len());
                let mut reads = Vec::with_capacity(ifc.reads.len());
                for (head, &w_prev) in ifc.reads.iter().zip(&prev.read_weights) {
                    let wr = ntm_address(tape, m, head, w_prev)?;
                    reads.push(memory_read(tape, m, wr)?);
                    read_weights.push(wr);
                }
                MemoryState {
                    memory: m,
                    read_weights,
                    write_weight: ww,
                    reads: tape.concat_rows(&reads)?,
                    dnc: None,
                }
            }
            InterfaceVector::Dnc(ifc) => {
                let dyn_prev = prev.dnc.expect("DNC state present for DNC model");
                let free: Vec<Var> = ifc.reads.iter().map(|r| r.free_gate).collect();
                let psi = retention(tape, &free, &prev.read_weights)?;
                let u = usage_update(tape, dyn_prev.usage, prev.write_weight, psi)?;
                let a = allocation(tape, u)?;
                let cw = content_address(tape, prev.memory, ifc.write_key, ifc.write_strength)?;
                let ww = write_weighting(tape, ifc.write_gate, ifc.alloc_gate, a, cw)?;
                let m = memory_write(tape, prev.memory, ww, ifc.erase, ifc.add)?;
                let link = link_update(tape, dyn_prev.link, ww, dyn_prev.precedence)?;
                let precedence = precedence_update(tape, dyn_prev.precedence, ww)?;
                let mut read_weights = Vec::with_capacity(ifc.reads.len());
                let mut reads = Vec::with_capacity(ifc.reads.len());
                for (head, &w_prev) in ifc.reads.iter().zip(&prev.read_weights) {
                    let cr = content_address(tape, m, head.key, head.strength)?;
                    let (fwd, bwd) = forward_backward(tape, link, w_prev)?;
                    let wr = read_weighting(tape, head.modes, bwd, cr, fwd)?;
                    reads.push(memory_read(tape, m, wr)?);
                    read_weights.push(wr);
                }
                MemoryState {
                    memory: m,
                    read_weights,
                    write_weight: ww,
                    reads: tape.concat_rows(&reads)?,
                    dnc: Some(DncDynamicState {
                        usage: u,
                        precedence,
                        link,
                    }),
                }
            }
        };
        let logits = compose_model_output(tape, ctl.h_out, memory.reads, bound.out_w, bound.out_b)?;
        Ok(StepOutput {
            logits,
            h_out: ctl.h_out,
            state: ModelState {
                controller: ctl.state,
                memory,
            },
        })
    }

    /// Unrolls `sample` from the initial state and sums the masked loss.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        sample: &TaskSample,
        loss_kind: LossKind,
    ) -> Result<Episode> {
        if sample.inputs.first().map(Vec::len) != Some(self.config.input) {
            return Err(Error::Config(format!(
                "sample input width does not match model input {}",
                self.config.input
            )));
        }
        let mut state = self.initial_state(tape);
        let mut logits = Vec::with_capacity(sample.len());
        let mut states = Vec::with_capacity(sample.len());
        let mut terms = Vec::new();
        for t in 0..sample.len() {
            let x = tape.constant(Tensor::column(sample.inputs[t].clone()));
            let out = self.step(tape, bound, x, &state)?;
            if sample.mask[t] {
                let target = &sample.targets[t];
                let term = match loss_kind {
                    LossKind::Bits => {
                        let y = tape.constant(Tensor::column(target.clone()));
                        tape.sigmoid_cross_entropy(out.logits, y)?
                    }
                    LossKind::Class => {
                        let class = argmax(target);
                        tape.softmax_cross_entropy(out.logits, class)?
                    }
                };
                terms.push(term);
            }
            logits.push(out.logits);
            state = out.state.clone();
            states.push(out.state);
        }
        let loss = if terms.is_empty() {
            tape.constant(Tensor::scalar(0.0))
        } else {
            let stacked = tape.concat_rows(&terms)?;
            tape.sum(stacked)?
        };
        Ok(Episode {
            logits,
            states,
            loss,
        })
    }

    /// Forward pass only: loss value and per-step output probabilities.
    pub fn predict(&self, sample: &TaskSample, loss_kind: LossKind) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let ep = self.unroll(&mut tape, &bound, sample, loss_kind)?;
        let probs = ep
            .logits
            .iter()
            .map(|&l| probabilities(tape.value(l).data(), loss_kind))
            .collect();
        Ok(Prediction {
            loss: tape.value(ep.loss).item(),
            probs,
        })
    }

    /// Forward and backward pass; gradients accumulate into `self.params`.
    pub fn accumulate_gradients(&mut self, sample: &TaskSample, loss_kind: LossKind) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let ep = self.unroll(&mut tape, &bound, sample, loss_kind)?;
        let loss = tape.value(ep.loss).item();
        if loss.is_finite() {
            tape.backward(ep.loss, &mut self.params)?;
        }
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub loss: f64,
    /// Output probabilities per time step.
    pub probs: Vec<Vec<f64>>,
}

pub fn probabilities(logits: &[f64], kind: LossKind) -> Vec<f64> {
    match kind {
        LossKind::Bits => logits.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
        LossKind::Class => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        }
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
