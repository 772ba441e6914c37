//! Controller networks.
//!
//! Every controller maps `(x_t, r_{t-1}, state)` to a control vector `h_t`
//! consumed by the heads and an output vector that is concatenated with
//! `r_t` to form the model output. Baseline controllers use `h_t` for both.
//! The partially non-recurrent variants (`en-pnr`, `lstm-pnr`) compute the
//! output vector `h'_t = tanh(W_x x_t + W_r r_{t-1} + b)` from the
//! input-driven pre-activation only, so it never sees the previous state,
//! while `h_t` itself is computed exactly as in the baseline.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{glorot_uniform, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Fnn,
    En,
    EnPnr,
    Lstm,
    LstmPnr,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Fnn,
        ControllerKind::En,
        ControllerKind::EnPnr,
        ControllerKind::Lstm,
        ControllerKind::LstmPnr,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ControllerKind::Fnn => "fnn",
            ControllerKind::En => "en",
            ControllerKind::EnPnr => "en-pnr",
            ControllerKind::Lstm => "lstm",
            ControllerKind::LstmPnr => "lstm-pnr",
        }
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, ControllerKind::Lstm | ControllerKind::LstmPnr)
    }

    pub fn is_recurrent(self) -> bool {
        self != ControllerKind::Fnn
    }

    pub fn is_partially_non_recurrent(self) -> bool {
        matches!(self, ControllerKind::EnPnr | ControllerKind::LstmPnr)
    }

    /// Number of stacked pre-activation blocks (4 for the LSTM gates z, i, f, o).
    fn blocks(self) -> usize {
        if self.is_lstm() {
            4
        } else {
            1
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown controller `{s}` (expected fnn, en, en-pnr, lstm or lstm-pnr)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControllerDims {
    pub input: usize,
    /// Total read width `R * W`.
    pub reads: usize,
    pub hidden: usize,
}

/// Parameter handles. LSTM matrices stack the z, i, f, o blocks row-wise,
/// so `w_x` is `4H x I`, and each block corresponds to one of `W_xz`, `W_xi`, ...
#[derive(Clone, Debug)]
pub struct ControllerParams {
    pub kind: ControllerKind,
    pub dims: ControllerDims,
    pub w_x: ParamId,
    pub w_r: ParamId,
    pub w_h: Option<ParamId>,
    pub b: ParamId,
}

fn blockwise_glorot<R: Rng>(
    rng: &mut R,
    blocks: usize,
    hidden: usize,
    fan_in: usize,
) -> Tensor {
    let mut data = Vec::with_capacity(blocks * hidden * fan_in);
    for _ in 0..blocks {
        data.extend(glorot_uniform(rng, hidden, fan_in, fan_in, hidden).into_data());
    }
    Tensor::new(blocks * hidden, fan_in, data)
}

impl ControllerParams {
    pub fn register<R: Rng>(
        kind: ControllerKind,
        dims: ControllerDims,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let k = kind.blocks();
        let h = dims.hidden;
        let w_x = params.add("controller.W_x", blockwise_glorot(rng, k, h, dims.input));
        let w_r = params.add("controller.W_r", blockwise_glorot(rng, k, h, dims.reads));
        let w_h = kind
            .is_recurrent()
            .then(|| params.add("controller.W_h", blockwise_glorot(rng, k, h, h)));
        let b = params.add("controller.b", Tensor::zeros(k * h, 1));
        ControllerParams {
            kind,
            dims,
            w_x,
            w_r,
            w_h,
            b,
        }
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> ControllerVars {
        ControllerVars {
            kind: self.kind,
            hidden: self.dims.hidden,
            w_x: tape.param(params, self.w_x),
            w_r: tape.param(params, self.w_r),
            w_h: self.w_h.map(|id| tape.param(params, id)),
            b: tape.param(params, self.b),
        }
    }
}

/// Controller parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct ControllerVars {
    pub kind: ControllerKind,
    pub hidden: usize,
    pub w_x: Var,
    pub w_r: Var,
    pub w_h: Option<Var>,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ControllerState {
    pub h: Var,
    /// LSTM cell; `None` for FNN and EN controllers.
    pub c: Option<Var>,
}

impl ControllerState {
    /// `h_0 = c_0 = 0`.
    pub fn zeros(tape: &mut Tape, kind: ControllerKind, hidden: usize) -> Self {
        ControllerState {
            h: tape.constant(Tensor::zeros(hidden, 1)),
            c: kind
                .is_lstm()
                .then(|| tape.constant(Tensor::zeros(hidden, 1))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ControllerOutput {
    /// `h_t`, sent to the read and write heads.
    pub h_control: Var,
    /// Vector concatenated with `r_t` for the model output.
    pub h_out: Var,
    /// Input-driven pre-activation `h̄'_t` (proposed controllers only).
    pub pre_activation: Option<Var>,
    pub state: ControllerState,
}

fn check_column(tape: &Tape, v: Var, len: usize, what: &str) -> Result<()> {
    if tape.shape(v) != (len, 1) {
        let (r, c) = tape.shape(v);
        return Err(Error::Shape {
            op: "controller",
            shapes: format!("{what} is {r}x{c}, expected {len}x1"),
        });
    }
    Ok(())
}

/// `W_x x + W_r r_prev + b`, all blocks.
fn input_drive(tape: &mut Tape, x: Var, r_prev: Var, p: &ControllerVars) -> Result<Var> {
    let a = tape.matmul(p.w_x, x)?;
    let b = tape.matmul(p.w_r, r_prev)?;
    let s = tape.add(a, b)?;
    tape.add(s, p.b)
}

fn recurrent_drive(tape: &mut Tape, h_prev: Var, p: &ControllerVars) -> Result<Var> {
    let w_h = p.w_h.ok_or_else(|| Error::Shape {
        op: "controller",
        shapes: format!("{} controller has no recurrent weights", p.kind),
    })?;
    check_column(tape, h_prev, p.hidden, "h_prev")?;
    tape.matmul(w_h, h_prev)
}

/// `h = tanh(W_x x + W_r r_prev + b)`.
pub fn fnn_forward(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    p: &ControllerVars,
) -> Result<ControllerOutput> {
    let pre = input_drive(tape, x, r_prev, p)?;
    let h = tape.tanh(pre)?;
    Ok(ControllerOutput {
        h_control: h,
        h_out: h,
        pre_activation: None,
        state: ControllerState { h, c: None },
    })
}

/// Elman step: `h = tanh(W_x x + W_r r_prev + W_h h_prev + b)`.
pub fn en_forward(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    state: &ControllerState,
    p: &ControllerVars,
) -> Result<ControllerOutput> {
    let pre = input_drive(tape, x, r_prev, p)?;
    let rec = recurrent_drive(tape, state.h, p)?;
    let total = tape.add(pre, rec)?;
    let h = tape.tanh(total)?;
    Ok(ControllerOutput {
        h_control: h,
        h_out: h,
        pre_activation: None,
        state: ControllerState { h, c: None },
    })
}

/// Partially non-recurrent Elman step.
///
/// `h̄' = W_x x + W_r r_prev + b`, `h' = tanh(h̄')`, `h = tanh(W_h h_prev + h̄')`.
pub fn proposed_en_forward(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    state: &ControllerState,
    p: &ControllerVars,
) -> Result<ControllerOutput> {
    let pre = input_drive(tape, x, r_prev, p)?;
    let h_out = tape.tanh(pre)?;
    let rec = recurrent_drive(tape, state.h, p)?;
    let total = tape.add(rec, pre)?;
    let h = tape.tanh(total)?;
    Ok(ControllerOutput {
        h_control: h,
        h_out,
        pre_activation: Some(pre),
        state: ControllerState { h, c: None },
    })
}

struct LstmStep {
    /// Input-driven pre-activation of all four blocks.
    drive: Var,
    h: Var,
    c: Var,
}

fn lstm_core(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    state: &ControllerState,
    p: &ControllerVars,
) -> Result<LstmStep> {
    let hidden = p.hidden;
    let c_prev = state.c.ok_or_else(|| Error::Shape {
        op: "controller",
        shapes: "LSTM state is missing its cell".into(),
    })?;
    check_column(tape, c_prev, hidden, "c_prev")?;
    let drive = input_drive(tape, x, r_prev, p)?;
    let rec = recurrent_drive(tape, state.h, p)?;
    let gates = tape.add(drive, rec)?;
    let z_pre = tape.slice(gates, 0, hidden)?;
    let z = tape.tanh(z_pre)?;
    let i_pre = tape.slice(gates, hidden, hidden)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = tape.slice(gates, 2 * hidden, hidden)?;
    let f = tape.sigmoid(f_pre)?;
    let o_pre = tape.slice(gates, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o_pre)?;
    let carry = tape.hadamard(f, c_prev)?;
    let write = tape.hadamard(i, z)?;
    let c = tape.add(carry, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.hadamard(o, tc)?;
    Ok(LstmStep { drive, h, c })
}

pub fn lstm_forward(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    state: &ControllerState,
    p: &ControllerVars,
) -> Result<ControllerOutput> {
    let step = lstm_core(tape, x, r_prev, state, p)?;
    Ok(ControllerOutput {
        h_control: step.h,
        h_out: step.h,
        pre_activation: None,
        state: ControllerState {
            h: step.h,
            c: Some(step.c),
        },
    })
}

/// Partially non-recurrent LSTM step.
///
/// `h̄' = W_xz x + W_rz r_prev + b_z` and `h' = tanh(h̄')`; the cell input is
/// `z = tanh(W_hz h_prev + h̄')`, which is the ordinary LSTM z-gate, so the
/// recurrent path is unchanged.
pub fn proposed_lstm_forward(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    state: &ControllerState,
    p: &ControllerVars,
) -> Result<ControllerOutput> {
    let step = lstm_core(tape, x, r_prev, state, p)?;
    let pre = tape.slice(step.drive, 0, p.hidden)?;
    let h_out = tape.tanh(pre)?;
    Ok(ControllerOutput {
        h_control: step.h,
        h_out,
        pre_activation: Some(pre),
        state: ControllerState {
            h: step.h,
            c: Some(step.c),
        },
    })
}

pub fn controller_forward(
    tape: &mut Tape,
    x: Var,
    r_prev: Var,
    state: &ControllerState,
    p: &ControllerVars,
) -> Result<ControllerOutput> {
    match p.kind {
        ControllerKind::Fnn => fnn_forward(tape, x, r_prev, p),
        ControllerKind::En => en_forward(tape, x, r_prev, state, p),
        ControllerKind::EnPnr => proposed_en_forward(tape, x, r_prev, state, p),
        ControllerKind::Lstm => lstm_forward(tape, x, r_prev, state, p),
        ControllerKind::LstmPnr => proposed_lstm_forward(tape, x, r_prev, state, p),
    }
}

/// `W_y [h_out ; r_t] + b_y`.
pub fn compose_model_output(
    tape: &mut Tape,
    h_out: Var,
    reads: Var,
    w_y: Var,
    b_y: Var,
) -> Result<Var> {
    let joined = tape.concat_rows(&[h_out, reads])?;
    let proj = tape.matmul(w_y, joined)?;
    tape.add(proj, b_y)
}
