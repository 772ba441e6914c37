//! NTM head addressing: content lookup, interpolation with the previous
//! weighting, circular shift, and sharpening.

use crate::error::Result;
use crate::graph::{Tape, Var};

/// Largest shift offset; shift distributions have `2 * MAX_SHIFT + 1` entries.
pub const MAX_SHIFT: usize = 3;
pub const SHIFT_SIZE: usize = 2 * MAX_SHIFT + 1;

/// Per-head control values, already activated.
#[derive(Clone, Copy, Debug)]
pub struct NtmHeadControl {
    pub key: Var,
    /// beta >= 0 (1 + softplus)
    pub strength: Var,
    /// g in [0, 1]
    pub gate: Var,
    /// softmax over offsets -3..=3
    pub shift: Var,
    /// gamma >= 1
    pub sharpen: Var,
}

/// `softmax_i(beta * K(k, M[i]))` with K the stabilized cosine similarity.
pub fn content_address(tape: &mut Tape, memory: Var, key: Var, strength: Var) -> Result<Var> {
    let sim = tape.cosine_rows(memory, key)?;
    let scaled = tape.hadamard(sim, strength)?;
    tape.softmax(scaled)
}

/// `g c + (1 - g) w_prev`.
pub fn interpolate(tape: &mut Tape, content: Var, w_prev: Var, gate: Var) -> Result<Var> {
    let a = tape.hadamard(content, gate)?;
    let keep = tape.one_minus(gate)?;
    let b = tape.hadamard(w_prev, keep)?;
    tape.add(a, b)
}

/// `w~[i] = sum_o w[(i - o) mod N] s[o + 3]`.
pub fn circular_shift(tape: &mut Tape, w: Var, shift: Var) -> Result<Var> {
    tape.circular_conv(w, shift)
}

/// `w[i]^gamma / sum_j w[j]^gamma`.
pub fn sharpen(tape: &mut Tape, w: Var, gamma: Var) -> Result<Var> {
    let powered = tape.power(w, gamma)?;
    let total = tape.sum(powered)?;
    tape.div(powered, total)
}

/// Full addressing pipeline for one head against `memory`.
pub fn ntm_address(
    tape: &mut Tape,
    memory: Var,
    head: &NtmHeadControl,
    w_prev: Var,
) -> Result<Var> {
    let c = content_address(tape, memory, head.key, head.strength)?;
    let g = interpolate(tape, c, w_prev, head.gate)?;
    let s = circular_shift(tape, g, head.shift)?;
    sharpen(tape, s, head.sharpen)
}
