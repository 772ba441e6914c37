//! DNC write/read weightings: free-gate retention, usage, allocation,
//! precedence, the temporal link matrix, and the three-mode read mixture.

use crate::error::Result;
use crate::graph::{Tape, Tensor, Var};

/// Usage, precedence, and link matrix carried across steps.
#[derive(Clone, Copy, Debug)]
pub struct DncDynamicState {
    pub usage: Var,
    pub precedence: Var,
    pub link: Var,
}

impl DncDynamicState {
    /// `u_0 = 0`, `p_0 = 0`, `L_0 = 0`.
    pub fn zeros(tape: &mut Tape, slots: usize) -> Self {
        DncDynamicState {
            usage: tape.constant(Tensor::zeros(slots, 1)),
            precedence: tape.constant(Tensor::zeros(slots, 1)),
            link: tape.constant(Tensor::zeros(slots, slots)),
        }
    }
}

/// `psi = prod_i (1 - f^i w^{r,i}_prev)`.
pub fn retention(tape: &mut Tape, free_gates: &[Var], read_prev: &[Var]) -> Result<Var> {
    assert_eq!(free_gates.len(), read_prev.len());
    let mut psi: Option<Var> = None;
    for (&f, &w) in free_gates.iter().zip(read_prev) {
        let freed = tape.hadamard(w, f)?;
        let keep = tape.one_minus(freed)?;
        psi = Some(match psi {
            Some(acc) => tape.hadamard(acc, keep)?,
            None => keep,
        });
    }
    Ok(psi.expect("at least one read head"))
}

/// `u = (u_prev + w^w_prev - u_prev * w^w_prev) * psi`.
pub fn usage_update(tape: &mut Tape, usage_prev: Var, write_prev: Var, psi: Var) -> Result<Var> {
    // u + w (1 - u): same value, but exact at u = 1 and never above 1
    let free = tape.one_minus(usage_prev)?;
    let fresh = tape.hadamard(write_prev, free)?;
    let union = tape.add(usage_prev, fresh)?;
    tape.hadamard(union, psi)
}

/// Stable ascending argsort; ties go to the lower index.
pub fn usage_order(usage: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..usage.len()).collect();
    order.sort_by(|&a, &b| usage[a].total_cmp(&usage[b]));
    order
}

/// `a[phi[j]] = (1 - u[phi[j]]) prod_{i<j} u[phi[i]]` with `phi` the
/// ascending usage order. The order is treated as a constant.
pub fn allocation(tape: &mut Tape, usage: Var) -> Result<Var> {
    let order = usage_order(tape.value(usage).data());
    let mut inverse = vec![0; order.len()];
    for (rank, &slot) in order.iter().enumerate() {
        inverse[slot] = rank;
    }
    let sorted = tape.gather(usage, order)?;
    let free = tape.one_minus(sorted)?;
    let prefix = tape.cumprod_exclusive(sorted)?;
    let sorted_alloc = tape.hadamard(free, prefix)?;
    tape.gather(sorted_alloc, inverse)
}

/// `w^w = g^w [g^a a + (1 - g^a) c^w]`.
pub fn write_weighting(
    tape: &mut Tape,
    write_gate: Var,
    alloc_gate: Var,
    alloc: Var,
    content: Var,
) -> Result<Var> {
    let a = tape.hadamard(alloc, alloc_gate)?;
    let keep = tape.one_minus(alloc_gate)?;
    let c = tape.hadamard(content, keep)?;
    let mix = tape.add(a, c)?;
    tape.hadamard(mix, write_gate)
}

/// `p = (1 - sum_i w^w[i]) p_prev + w^w`.
pub fn precedence_update(tape: &mut Tape, precedence_prev: Var, write: Var) -> Result<Var> {
    let total = tape.sum(write)?;
    let keep = tape.one_minus(total)?;
    let decayed = tape.hadamard(precedence_prev, keep)?;
    tape.add(decayed, write)
}

/// `L[i,j] = (1 - w[i] - w[j]) L_prev[i,j] + w[i] p_prev[j]` with a zero diagonal.
pub fn link_update(tape: &mut Tape, link_prev: Var, write: Var, precedence_prev: Var) -> Result<Var> {
    let n = tape.shape(write).0;
    let ones = tape.constant(Tensor::filled(n, 1, 1.0));
    let by_row = tape.outer(write, ones)?;
    let by_col = tape.outer(ones, write)?;
    let both = tape.add(by_row, by_col)?;
    let keep = tape.one_minus(both)?;
    let kept = tape.hadamard(keep, link_prev)?;
    let fresh = tape.outer(write, precedence_prev)?;
    let link = tape.add(kept, fresh)?;
    let mut mask = Tensor::filled(n, n, 1.0);
    for i in 0..n {
        mask.set(i, i, 0.0);
    }
    let mask = tape.constant(mask);
    tape.hadamard(link, mask)
}

/// Forward `L w_prev` and backward `L^T w_prev` weightings.
pub fn forward_backward(tape: &mut Tape, link: Var, read_prev: Var) -> Result<(Var, Var)> {
    let forward = tape.matmul(link, read_prev)?;
    let lt = tape.transpose(link)?;
    let backward = tape.matmul(lt, read_prev)?;
    Ok((forward, backward))
}

/// `w^r = pi[0] b + pi[1] c + pi[2] f` (modes ordered backward, content, forward).
pub fn read_weighting(
    tape: &mut Tape,
    modes: Var,
    backward: Var,
    content: Var,
    forward: Var,
) -> Result<Var> {
    let pb = tape.slice(modes, 0, 1)?;
    let pc = tape.slice(modes, 1, 1)?;
    let pf = tape.slice(modes, 2, 1)?;
    let b = tape.hadamard(backward, pb)?;
    let c = tape.hadamard(content, pc)?;
    let f = tape.hadamard(forward, pf)?;
    let bc = tape.add(b, c)?;
    tape.add(bc, f)
}
