//! External memory: state, erase/add writes, reads, and the projection of
//! the controller's control vector into head parameters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dnc::DncDynamicState;
use crate::error::{Error, Result};
use crate::graph::{glorot_uniform, ParamId, ParamSet, Tape, Tensor, Var};
use crate::ntm::{NtmHeadControl, SHIFT_SIZE};

/// Constant every memory cell holds at the start of an episode.
pub const INITIAL_MEMORY_VALUE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemoryKind {
    Ntm,
    Dnc,
}

impl MemoryKind {
    pub fn token(self) -> &'static str {
        match self {
            MemoryKind::Ntm => "ntm",
            MemoryKind::Dnc => "dnc",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MemoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntm" => Ok(MemoryKind::Ntm),
            "dnc" => Ok(MemoryKind::Dnc),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected ntm or dnc)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activation {
    Identity,
    /// `1 + softplus`
    Oneplus,
    Sigmoid,
    Softmax,
}

#[derive(Clone, Debug)]
struct Group {
    size: usize,
    activation: Activation,
}

/// Sizes and activations of every head-parameter group, in projection order.
#[derive(Clone, Debug)]
pub struct InterfaceLayout {
    pub kind: MemoryKind,
    pub width: usize,
    pub read_heads: usize,
    groups: Vec<Group>,
}

impl InterfaceLayout {
    pub fn new(kind: MemoryKind, width: usize, read_heads: usize) -> Self {
        use Activation::*;
        let g = |size, activation| Group { size, activation };
        let mut groups = Vec::new();
        match kind {
            MemoryKind::Ntm => {
                let head = |groups: &mut Vec<Group>| {
                    groups.extend([
                        g(width, Identity),
                        g(1, Oneplus),
                        g(1, Sigmoid),
                        g(SHIFT_SIZE, Softmax),
                        g(1, Oneplus),
                    ])
                };
                head(&mut groups);
                groups.extend([g(width, Sigmoid), g(width, Identity)]);
                for _ in 0..read_heads {
                    head(&mut groups);
                }
            }
            MemoryKind::Dnc => {
                groups.extend([
                    g(width, Identity),
                    g(1, Oneplus),
                    g(width, Sigmoid),
                    g(width, Identity),
                    g(1, Sigmoid),
                    g(1, Sigmoid),
                ]);
                for _ in 0..read_heads {
                    groups.extend([
                        g(width, Identity),
                        g(1, Oneplus),
                        g(1, Sigmoid),
                        g(3, Softmax),
                    ]);
                }
            }
        }
        InterfaceLayout {
            kind,
            width,
            read_heads,
            groups,
        }
    }

    /// Length of the raw interface vector.
    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }

    /// Registers `heads.W` (`total x hidden`) and `heads.b`, initializing each
    /// group's block with its own fan-out.
    pub fn register<R: Rng>(
        &self,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> (ParamId, ParamId) {
        let mut data = Vec::with_capacity(self.total() * hidden);
        for grp in &self.groups {
            data.extend(glorot_uniform(rng, grp.size, hidden, hidden, grp.size).into_data());
        }
        let w = params.add("heads.W", Tensor::new(self.total(), hidden, data));
        let b = params.add("heads.b", Tensor::zeros(self.total(), 1));
        (w, b)
    }
}

#[derive(Clone, Debug)]
pub struct NtmInterface {
    pub write: NtmHeadControl,
    pub erase: Var,
    pub add: Var,
    pub reads: Vec<NtmHeadControl>,
}

#[derive(Clone, Debug)]
pub struct DncReadControl {
    pub key: Var,
    pub strength: Var,
    pub free_gate: Var,
    /// `[backward, content, forward]`
    pub modes: Var,
}

#[derive(Clone, Debug)]
pub struct DncInterface {
    pub write_key: Var,
    pub write_strength: Var,
    pub erase: Var,
    pub add: Var,
    pub alloc_gate: Var,
    pub write_gate: Var,
    pub reads: Vec<DncReadControl>,
}

#[derive(Clone, Debug)]
pub enum InterfaceVector {
    Ntm(NtmInterface),
    Dnc(DncInterface),
}

/// Projects `h_control` through `heads.W/heads.b` and activates each group.
pub fn parse_interface(
    tape: &mut Tape,
    h_control: Var,
    layout: &InterfaceLayout,
    w: Var,
    b: Var,
) -> Result<InterfaceVector> {
    let proj = tape.matmul(w, h_control)?;
    let raw = tape.add(proj, b)?;
    let mut at = 0;
    let mut parts = Vec::with_capacity(layout.groups.len());
    for grp in &layout.groups {
        let piece = tape.slice(raw, at, grp.size)?;
        at += grp.size;
        parts.push(match grp.activation {
            Activation::Identity => piece,
            Activation::Oneplus => tape.oneplus(piece)?,
            Activation::Sigmoid => tape.sigmoid(piece)?,
            Activation::Softmax => tape.softmax(piece)?,
        });
    }
    let mut it = parts.into_iter();
    let mut next = || it.next().expect("layout group count");
    Ok(match layout.kind {
        MemoryKind::Ntm => {
            let write = NtmHeadControl {
                key: next(),
                strength: next(),
                gate: next(),
                shift: next(),
                sharpen: next(),
            };
            let erase = next();
            let add = next();
            let reads = (0..layout.read_heads)
                .map(|_| NtmHeadControl {
                    key: next(),
                    strength: next(),
                    gate: next(),
                    shift: next(),
                    sharpen: next(),
                })
                .collect();
            InterfaceVector::Ntm(NtmInterface {
                write,
                erase,
                add,
                reads,
            })
        }
        MemoryKind::Dnc => {
            let write_key = next();
            let write_strength = next();
            let erase = next();
            let add = next();
            let alloc_gate = next();
            let write_gate = next();
            let reads = (0..layout.read_heads)
                .map(|_| DncReadControl {
                    key: next(),
                    strength: next(),
                    free_gate: next(),
                    modes: next(),
                })
                .collect();
            InterfaceVector::Dnc(DncInterface {
                write_key,
                write_strength,
                erase,
                add,
                alloc_gate,
                write_gate,
                reads,
            })
        }
    })
}

/// `M = M_prev * (E - w e^T) + w v^T`.
pub fn memory_write(tape: &mut Tape, memory_prev: Var, weight: Var, erase: Var, add: Var) -> Result<Var> {
    let we = tape.outer(weight, erase)?;
    let keep = tape.one_minus(we)?;
    let kept = tape.hadamard(memory_prev, keep)?;
    let wv = tape.outer(weight, add)?;
    tape.add(kept, wv)
}

/// `r = M^T w`.
pub fn memory_read(tape: &mut Tape, memory: Var, weight: Var) -> Result<Var> {
    let mt = tape.transpose(memory)?;
    tape.matmul(mt, weight)
}

/// Memory contents and addressing state carried between steps.
#[derive(Clone, Debug)]
pub struct MemoryState {
    /// `N x W`
    pub memory: Var,
    pub read_weights: Vec<Var>,
    pub write_weight: Var,
    /// Concatenated reads `[r^1; ...; r^R]`.
    pub reads: Var,
    pub dnc: Option<DncDynamicState>,
}

impl MemoryState {
    /// Episode start: memory filled with [`INITIAL_MEMORY_VALUE`], zero reads;
    /// NTM weightings one-hot at slot 0, DNC weightings and state zero.
    pub fn initial(
        tape: &mut Tape,
        kind: MemoryKind,
        slots: usize,
        width: usize,
        read_heads: usize,
    ) -> Self {
        let memory = tape.constant(Tensor::filled(slots, width, INITIAL_MEMORY_VALUE));
        let reads = tape.constant(Tensor::zeros(read_heads * width, 1));
        let start = match kind {
            MemoryKind::Ntm => Tensor::one_hot(slots, 0),
            MemoryKind::Dnc => Tensor::zeros(slots, 1),
        };
        let write_weight = tape.constant(start.clone());
        let read_weights = (0..read_heads).map(|_| tape.constant(start.clone())).collect();
        let dnc = (kind == MemoryKind::Dnc).then(|| DncDynamicState::zeros(tape, slots));
        MemoryState {
            memory,
            read_weights,
            write_weight,
            reads,
            dnc,
        }
    }

    /// Checks the weighting, usage, and link invariants.
    ///
    /// NTM weightings must be exact simplices (sum 1 within `1e-9`); DNC
    /// weightings must be sub-stochastic within `1e-6`.
    pub fn check_invariants(&self, tape: &Tape, kind: MemoryKind) -> std::result::Result<(), String> {
        let weights = std::iter::once(("write", self.write_weight))
            .chain(self.read_weights.iter().map(|&w| ("read", w)));
        for (what, w) in weights {
            let v = tape.value(w).data();
            match kind {
                MemoryKind::Ntm => check_simplex(v, 1e-9).map_err(|e| format!("{what}: {e}"))?,
                MemoryKind::Dnc => {
                    check_substochastic(v, 1e-6).map_err(|e| format!("{what}: {e}"))?
                }
            }
        }
        if let Some(dnc) = &self.dnc {
            let u = tape.value(dnc.usage).data();
            if let Some(x) = u.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(format!("usage entry {x} outside [0, 1]"));
            }
            check_link(tape.value(dnc.link), 1e-6)?;
        }
        Ok(())
    }
}

pub fn check_simplex(w: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some(x) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(format!("entry {x} outside [0, 1]"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(format!("sum {s} differs from 1"));
    }
    Ok(())
}

pub fn check_substochastic(w: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some(x) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(format!("entry {x} outside [0, 1]"));
    }
    let s: f64 = w.iter().sum();
    if s > 1.0 + tol {
        return Err(format!("sum {s} exceeds 1"));
    }
    Ok(())
}

pub fn check_link(link: &Tensor, tol: f64) -> std::result::Result<(), String> {
    let n = link.rows();
    for i in 0..n {
        if link.get(i, i) != 0.0 {
            return Err(format!("link diagonal {i} is {}", link.get(i, i)));
        }
        let row: f64 = link.row(i).iter().sum();
        let col: f64 = (0..n).map(|r| link.get(r, i)).sum();
        if row > 1.0 + tol || col > 1.0 + tol {
            return Err(format!("link row/col {i} sums {row}/{col}"));
        }
    }
    if let Some(x) = link.data().iter().find(|x| !(0.0..=1.0 + tol).contains(*x)) {
        return Err(format!("link entry {x} outside [0, 1]"));
    }
    Ok(())
}
