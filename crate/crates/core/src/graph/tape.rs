//! Reverse-mode differentiation over dense matrices.
//!
//! Every primitive application appends one node to the [`Tape`]. Nodes are
//! only ever appended, so the recording order is a topological order and
//! [`Tape::gradients`] walks it backwards exactly once.

use std::fmt;
use std::str::FromStr;

use super::param::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stabilizer added to the product of norms in cosine similarity.
pub const COSINE_EPSILON: f64 = 1e-6;

/// Handle to a node on one tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    /// Elementwise; either operand may be 1x1 and is then broadcast.
    Add,
    Sub,
    Hadamard,
    Div,
    ScalarMul(f64),
    /// Adds a constant to every entry.
    Offset(f64),
    /// Stacks operands with equal column counts on top of each other.
    ConcatRows,
    /// Rows `start..start + len`.
    Slice { start: usize, len: usize },
    Transpose,
    Tanh,
    Sigmoid,
    Softplus,
    /// Softmax over every entry of the operand.
    Softmax,
    Exp,
    /// Elementwise `base^exponent` with a 1x1 exponent node.
    Power,
    /// `(M, k)` to the column of cosine similarities between each row of `M` and `k`.
    CosineSimilarityRows,
    Sum,
    Mean,
    /// `(w, s)` with `s` of odd length `2h+1` holding offsets `-h..=h`:
    /// `out[i] = sum_o w[(i - o) mod n] * s[o + h]`.
    CircularConv,
    Outer,
    /// `out[j] = prod_{i<j} x[i]`.
    CumProdExclusive,
    /// `out[i] = x[index[i]]`.
    Gather(Vec<usize>),
    /// `(logits, targets)` to the summed logistic cross-entropy.
    SigmoidCrossEntropy,
    /// Negative log softmax probability of the given class.
    SoftmaxCrossEntropy(usize),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Hadamard => "hadamard",
            Primitive::Div => "div",
            Primitive::ScalarMul(_) => "scalar-mul",
            Primitive::Offset(_) => "offset",
            Primitive::ConcatRows => "concat-rows",
            Primitive::Slice { .. } => "slice",
            Primitive::Transpose => "transpose",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "logistic-sigmoid",
            Primitive::Softplus => "softplus",
            Primitive::Softmax => "softmax-over-vector",
            Primitive::Exp => "exp",
            Primitive::Power => "power",
            Primitive::CosineSimilarityRows => "cosine-similarity-rowwise",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::CircularConv => "circular-convolution-1d",
            Primitive::Outer => "outer-product",
            Primitive::CumProdExclusive => "cumulative-product-exclusive",
            Primitive::Gather(_) => "gather",
            Primitive::SigmoidCrossEntropy => "sigmoid-cross-entropy",
            Primitive::SoftmaxCrossEntropy(_) => "softmax-cross-entropy",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "hadamard" => Primitive::Hadamard,
            "div" => Primitive::Div,
            "concat-rows" => Primitive::ConcatRows,
            "transpose" => Primitive::Transpose,
            "tanh" => Primitive::Tanh,
            "logistic-sigmoid" => Primitive::Sigmoid,
            "softplus" => Primitive::Softplus,
            "softmax-over-vector" => Primitive::Softmax,
            "exp" => Primitive::Exp,
            "power" => Primitive::Power,
            "cosine-similarity-rowwise" => Primitive::CosineSimilarityRows,
            "sum" => Primitive::Sum,
            "mean" => Primitive::Mean,
            "circular-convolution-1d" => Primitive::CircularConv,
            "outer-product" => Primitive::Outer,
            "cumulative-product-exclusive" => Primitive::CumProdExclusive,
            "sigmoid-cross-entropy" => Primitive::SigmoidCrossEntropy,
            "scalar-mul" => return Err(Error::PrimitiveNeedsAttributes("scalar-mul")),
            "offset" => return Err(Error::PrimitiveNeedsAttributes("offset")),
            "slice" => return Err(Error::PrimitiveNeedsAttributes("slice")),
            "gather" => return Err(Error::PrimitiveNeedsAttributes("gather")),
            "softmax-cross-entropy" => {
                return Err(Error::PrimitiveNeedsAttributes("softmax-cross-entropy"))
            }
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }
}

#[derive(Debug)]
enum Source {
    Constant,
    Param(ParamId),
    Op(Primitive, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    source: Source,
}

/// Append-only record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reached from a loss.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `var` does not influence the loss.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::wrt`] but materializes structural zeros.
    pub fn wrt_dense(&self, var: Var, len: usize) -> Vec<f64> {
        self.wrt(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn shape_str(t: &Tensor) -> String {
    format!("{}x{}", t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn power_forward(base: f64, exponent: f64) -> f64 {
    if base == 0.0 {
        if exponent == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        base.powf(exponent)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Source::Constant)
    }

    /// Records the current value of a parameter as a leaf.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value().clone(), Source::Param(id))
    }

    fn push(&mut self, value: Tensor, source: Source) -> Var {
        self.nodes.push(Node { value, source });
        Var(self.nodes.len() - 1)
    }

    /// Applies `kind` to `inputs`, recording the result.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let value = self.forward(&kind, inputs)?;
        Ok(self.push(value, Source::Op(kind, inputs.to_vec())))
    }

    fn arity(&self, kind: &Primitive, inputs: &[Var], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::shape(
                kind.name(),
                format!("expected {n} operand(s), got {}", inputs.len()),
            ));
        }
        Ok(())
    }

    fn forward(&self, kind: &Primitive, inputs: &[Var]) -> Result<Tensor> {
        use Primitive as P;
        let name = kind.name();
        match kind {
            P::MatMul => {
                self.arity(kind, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.cols() != b.rows() {
                    return Err(Error::shape(
                        name,
                        format!("{} * {}", shape_str(a), shape_str(b)),
                    ));
                }
                Ok(matmul(a, b))
            }
            P::Add | P::Sub | P::Hadamard | P::Div => {
                self.arity(kind, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                let f: fn(f64, f64) -> f64 = match kind {
                    P::Add => |x, y| x + y,
                    P::Sub => |x, y| x - y,
                    P::Hadamard => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                broadcast(name, a, b, f)
            }
            P::ScalarMul(k) => {
                self.arity(kind, inputs, 1)?;
                Ok(map(self.value(inputs[0]), |x| k * x))
            }
            P::Offset(k) => {
                self.arity(kind, inputs, 1)?;
                Ok(map(self.value(inputs[0]), |x| x + k))
            }
            P::ConcatRows => {
                if inputs.is_empty() {
                    return Err(Error::shape(name, "no operands"));
                }
                let cols = self.value(inputs[0]).cols();
                if inputs.iter().any(|&v| self.value(v).cols() != cols) {
                    let shapes: Vec<String> =
                        inputs.iter().map(|&v| shape_str(self.value(v))).collect();
                    return Err(Error::shape(name, shapes.join(", ")));
                }
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in inputs {
                    let t = self.value(v);
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Ok(Tensor::new(rows, cols, data))
            }
            P::Slice { start, len } => {
                self.arity(kind, inputs, 1)?;
                let a = self.value(inputs[0]);
                if *len == 0 || start + len > a.rows() {
                    return Err(Error::shape(
                        name,
                        format!("rows {start}..{} of {}", start + len, shape_str(a)),
                    ));
                }
                let c = a.cols();
                Ok(Tensor::new(
                    *len,
                    c,
                    a.data()[start * c..(start + len) * c].to_vec(),
                ))
            }
            P::Transpose => {
                self.arity(kind, inputs, 1)?;
                Ok(transpose(self.value(inputs[0])))
            }
            P::Tanh => {
                self.arity(kind, inputs, 1)?;
                Ok(map(self.value(inputs[0]), f64::tanh))
            }
            P::Sigmoid => {
                self.arity(kind, inputs, 1)?;
                Ok(map(self.value(inputs[0]), sigmoid))
            }
            P::Softplus => {
                self.arity(kind, inputs, 1)?;
                Ok(map(self.value(inputs[0]), softplus))
            }
            P::Exp => {
                self.arity(kind, inputs, 1)?;
                Ok(map(self.value(inputs[0]), f64::exp))
            }
            P::Softmax => {
                self.arity(kind, inputs, 1)?;
                let a = self.value(inputs[0]);
                Ok(Tensor::new(a.rows(), a.cols(), softmax(a.data())))
            }
            P::Power => {
                self.arity(kind, inputs, 2)?;
                let (a, e) = (self.value(inputs[0]), self.value(inputs[1]));
                if e.shape() != (1, 1) {
                    return Err(Error::shape(
                        name,
                        format!("exponent must be 1x1, got {}", shape_str(e)),
                    ));
                }
                let g = e.item();
                Ok(map(a, |x| power_forward(x, g)))
            }
            P::CosineSimilarityRows => {
                self.arity(kind, inputs, 2)?;
                let (m, k) = (self.value(inputs[0]), self.value(inputs[1]));
                if k.cols() != 1 || k.rows() != m.cols() {
                    return Err(Error::shape(
                        name,
                        format!("memory {} vs key {}", shape_str(m), shape_str(k)),
                    ));
                }
                let knorm = norm(k.data());
                let out = (0..m.rows())
                    .map(|i| {
                        let row = m.row(i);
                        dot(row, k.data()) / (norm(row) * knorm + COSINE_EPSILON)
                    })
                    .collect();
                Ok(Tensor::column(out))
            }
            P::Sum => {
                self.arity(kind, inputs, 1)?;
                Ok(Tensor::scalar(self.value(inputs[0]).sum()))
            }
            P::Mean => {
                self.arity(kind, inputs, 1)?;
                let a = self.value(inputs[0]);
                Ok(Tensor::scalar(a.sum() / a.len() as f64))
            }
            P::CircularConv => {
                self.arity(kind, inputs, 2)?;
                let (w, s) = (self.value(inputs[0]), self.value(inputs[1]));
                if w.cols() != 1 || s.cols() != 1 || s.rows() % 2 == 0 {
                    return Err(Error::shape(
                        name,
                        format!("weights {} with shift {}", shape_str(w), shape_str(s)),
                    ));
                }
                let n = w.rows() as isize;
                let half = (s.rows() / 2) as isize;
                let mut out = vec![0.0; w.rows()];
                for (i, o) in out.iter_mut().enumerate() {
                    for (si, sv) in s.data().iter().enumerate() {
                        let offset = si as isize - half;
                        let src = (i as isize - offset).rem_euclid(n) as usize;
                        *o += w.data()[src] * sv;
                    }
                }
                Ok(Tensor::column(out))
            }
            P::Outer => {
                self.arity(kind, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.cols() != 1 || b.cols() != 1 {
                    return Err(Error::shape(
                        name,
                        format!("{} outer {}", shape_str(a), shape_str(b)),
                    ));
                }
                let mut data = Vec::with_capacity(a.rows() * b.rows());
                for &x in a.data() {
                    data.extend(b.data().iter().map(|&y| x * y));
                }
                Ok(Tensor::new(a.rows(), b.rows(), data))
            }
            P::CumProdExclusive => {
                self.arity(kind, inputs, 1)?;
                let a = self.value(inputs[0]);
                if a.cols() != 1 {
                    return Err(Error::shape(name, shape_str(a)));
                }
                let mut acc = 1.0;
                let out = a
                    .data()
                    .iter()
                    .map(|&x| {
                        let y = acc;
                        acc *= x;
                        y
                    })
                    .collect();
                Ok(Tensor::column(out))
            }
            P::Gather(index) => {
                self.arity(kind, inputs, 1)?;
                let a = self.value(inputs[0]);
                if a.cols() != 1 || index.iter().any(|&i| i >= a.rows()) {
                    return Err(Error::shape(
                        name,
                        format!("index out of range for {}", shape_str(a)),
                    ));
                }
                Ok(Tensor::column(index.iter().map(|&i| a.data()[i]).collect()))
            }
            P::SigmoidCrossEntropy => {
                self.arity(kind, inputs, 2)?;
                let (x, t) = (self.value(inputs[0]), self.value(inputs[1]));
                if x.shape() != t.shape() {
                    return Err(Error::shape(
                        name,
                        format!("logits {} vs targets {}", shape_str(x), shape_str(t)),
                    ));
                }
                let loss = x
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
                    .sum();
                Ok(Tensor::scalar(loss))
            }
            P::SoftmaxCrossEntropy(class) => {
                self.arity(kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                if *class >= x.len() {
                    return Err(Error::shape(
                        name,
                        format!("class {class} out of range for {}", shape_str(x)),
                    ));
                }
                let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                Ok(Tensor::scalar(lse - x.data()[*class]))
            }
        }
    }

    /// Adjoints of `loss` with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if let Source::Op(kind, inputs) = &self.nodes[idx].source {
                self.vjp(kind, inputs, &self.nodes[idx].value, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `d loss / d param` into every recorded parameter's gradient.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Source::Param(id), Some(g)) = (&node.source, grads.grads[idx].as_deref()) {
                params
                    .get_mut(*id)
                    .grad_mut()
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(acc, v)| *acc += v);
            }
        }
        Ok(())
    }

    fn vjp(
        &self,
        kind: &Primitive,
        inputs: &[Var],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        use Primitive as P;
        let val = |v: Var| &self.nodes[v.0].value;
        match kind {
            P::MatMul => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let (n, k, m) = (a.rows(), a.cols(), b.cols());
                let da = accum(grads, inputs[0], a.len());
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for (p, d) in da[i * k..(i + 1) * k].iter_mut().enumerate() {
                        *d += dot(grow, &b.data()[p * m..(p + 1) * m]);
                    }
                }
                let db = accum(grads, inputs[1], b.len());
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let av = a.data()[i * k + p];
                        if av != 0.0 {
                            db[p * m..(p + 1) * m]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(d, gv)| *d += av * gv);
                        }
                    }
                }
            }
            P::Add | P::Sub | P::Hadamard | P::Div => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let n = out.len();
                let mut ga = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for i in 0..n {
                    let x = if a.len() == 1 { a.data()[0] } else { a.data()[i] };
                    let y = if b.len() == 1 { b.data()[0] } else { b.data()[i] };
                    let (p, q) = match kind {
                        P::Add => (g[i], g[i]),
                        P::Sub => (g[i], -g[i]),
                        P::Hadamard => (g[i] * y, g[i] * x),
                        _ => (g[i] / y, -g[i] * x / (y * y)),
                    };
                    ga[i] = p;
                    gb[i] = q;
                }
                for (var, t, local) in [(inputs[0], a, ga), (inputs[1], b, gb)] {
                    let dv = accum(grads, var, t.len());
                    if t.len() == 1 && n != 1 {
                        dv[0] += local.iter().sum::<f64>();
                    } else {
                        add_into(dv, &local);
                    }
                }
            }
            P::ScalarMul(k) => {
                let da = accum(grads, inputs[0], g.len());
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += k * gv);
            }
            P::Offset(_) => {
                let da = accum(grads, inputs[0], g.len());
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
            P::ConcatRows => {
                let mut at = 0;
                for &v in inputs {
                    let len = val(v).len();
                    let dv = accum(grads, v, len);
                    dv.iter_mut()
                        .zip(&g[at..at + len])
                        .for_each(|(d, gv)| *d += gv);
                    at += len;
                }
            }
            P::Slice { start, .. } => {
                let a = val(inputs[0]);
                let c = a.cols();
                let da = accum(grads, inputs[0], a.len());
                da[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, gv)| *d += gv);
            }
            P::Transpose => {
                let a = val(inputs[0]);
                let (r, c) = a.shape();
                let da = accum(grads, inputs[0], a.len());
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] += g[j * r + i];
                    }
                }
            }
            P::Tanh => {
                let da = accum(grads, inputs[0], g.len());
                for ((d, gv), y) in da.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }
            P::Sigmoid => {
                let da = accum(grads, inputs[0], g.len());
                for ((d, gv), y) in da.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }
            P::Softplus => {
                let x = val(inputs[0]);
                let da = accum(grads, inputs[0], g.len());
                for ((d, gv), xv) in da.iter_mut().zip(g).zip(x.data()) {
                    *d += gv * sigmoid(*xv);
                }
            }
            P::Exp => {
                let da = accum(grads, inputs[0], g.len());
                for ((d, gv), y) in da.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y;
                }
            }
            P::Softmax => {
                let y = out.data();
                let inner = dot(g, y);
                let da = accum(grads, inputs[0], g.len());
                for ((d, gv), yv) in da.iter_mut().zip(g).zip(y) {
                    *d += yv * (gv - inner);
                }
            }
            P::Power => {
                let (a, e) = (val(inputs[0]), val(inputs[1]));
                let gamma = e.item();
                let da = accum(grads, inputs[0], a.len());
                for ((d, gv), x) in da.iter_mut().zip(g).zip(a.data()) {
                    let slope = if *x == 0.0 {
                        if gamma == 1.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        gamma * x.powf(gamma - 1.0)
                    };
                    *d += gv * slope;
                }
                let de: f64 = g
                    .iter()
                    .zip(a.data())
                    .zip(out.data())
                    .filter(|((_, x), _)| **x > 0.0)
                    .map(|((gv, x), y)| gv * y * x.ln())
                    .sum();
                accum(grads, inputs[1], 1)[0] += de;
            }
            P::CosineSimilarityRows => {
                let (m, k) = (val(inputs[0]), val(inputs[1]));
                let w = m.cols();
                let kd = k.data();
                let knorm = norm(kd);
                let mut dk = vec![0.0; w];
                let dm = accum(grads, inputs[0], m.len());
                for (i, gv) in g.iter().enumerate() {
                    if *gv == 0.0 {
                        continue;
                    }
                    let row = m.row(i);
                    let rnorm = norm(row);
                    let num = dot(row, kd);
                    let den = rnorm * knorm + COSINE_EPSILON;
                    // d/dk = row/den - num/den^2 * |row| * k/|k|
                    let kcoef = if knorm > 0.0 {
                        num * rnorm / (den * den * knorm)
                    } else {
                        0.0
                    };
                    let rcoef = if rnorm > 0.0 {
                        num * knorm / (den * den * rnorm)
                    } else {
                        0.0
                    };
                    for j in 0..w {
                        dk[j] += gv * (row[j] / den - kcoef * kd[j]);
                        dm[i * w + j] += gv * (kd[j] / den - rcoef * row[j]);
                    }
                }
                let dkv = accum(grads, inputs[1], w);
                dkv.iter_mut().zip(&dk).for_each(|(d, v)| *d += v);
            }
            P::Sum => {
                let n = val(inputs[0]).len();
                let da = accum(grads, inputs[0], n);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            P::Mean => {
                let n = val(inputs[0]).len();
                let da = accum(grads, inputs[0], n);
                da.iter_mut().for_each(|d| *d += g[0] / n as f64);
            }
            P::CircularConv => {
                let (w, s) = (val(inputs[0]), val(inputs[1]));
                let n = w.rows() as isize;
                let half = (s.rows() / 2) as isize;
                let mut dw = vec![0.0; w.rows()];
                let mut ds = vec![0.0; s.rows()];
                for (i, gv) in g.iter().enumerate() {
                    for (si, sv) in s.data().iter().enumerate() {
                        let src = (i as isize - (si as isize - half)).rem_euclid(n) as usize;
                        dw[src] += gv * sv;
                        ds[si] += gv * w.data()[src];
                    }
                }
                add_into(accum(grads, inputs[0], dw.len()), &dw);
                add_into(accum(grads, inputs[1], ds.len()), &ds);
            }
            P::Outer => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let m = b.rows();
                let da = accum(grads, inputs[0], a.rows());
                for (i, d) in da.iter_mut().enumerate() {
                    *d += dot(&g[i * m..(i + 1) * m], b.data());
                }
                let db = accum(grads, inputs[1], m);
                for (i, av) in a.data().iter().enumerate() {
                    for (d, gv) in db.iter_mut().zip(&g[i * m..(i + 1) * m]) {
                        *d += av * gv;
                    }
                }
            }
            P::CumProdExclusive => {
                // dx[k] = y[k] * S[k], S[k] = g[k+1] + x[k+1] * S[k+1], S[n-1] = 0
                let x = val(inputs[0]).data();
                let y = out.data();
                let n = x.len();
                let da = accum(grads, inputs[0], n);
                let mut suffix = 0.0;
                for k in (0..n).rev() {
                    da[k] += y[k] * suffix;
                    suffix = g[k] + x[k] * suffix;
                }
            }
            P::Gather(index) => {
                let n = val(inputs[0]).len();
                let da = accum(grads, inputs[0], n);
                for (gv, &i) in g.iter().zip(index) {
                    da[i] += gv;
                }
            }
            P::SigmoidCrossEntropy => {
                let (x, t) = (val(inputs[0]), val(inputs[1]));
                let gl = g[0];
                let dx = accum(grads, inputs[0], x.len());
                for ((d, xv), tv) in dx.iter_mut().zip(x.data()).zip(t.data()) {
                    *d += gl * (sigmoid(*xv) - tv);
                }
                let dt = accum(grads, inputs[1], t.len());
                for (d, xv) in dt.iter_mut().zip(x.data()) {
                    *d -= gl * xv;
                }
            }
            P::SoftmaxCrossEntropy(class) => {
                let x = val(inputs[0]);
                let p = softmax(x.data());
                let dx = accum(grads, inputs[0], x.len());
                for (i, (d, pv)) in dx.iter_mut().zip(&p).enumerate() {
                    let t = if i == *class { 1.0 } else { 0.0 };
                    *d += g[0] * (pv - t);
                }
            }
        }
    }

    // Typed conveniences over `apply`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Hadamard, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn scalar_mul(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Primitive::ScalarMul(k), &[a])
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Primitive::Offset(k), &[a])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scalar_mul(a, -1.0)?;
        self.offset(neg, 1.0)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { start, len }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    /// `1 + softplus(a)`.
    pub fn oneplus(&mut self, a: Var) -> Result<Var> {
        let sp = self.softplus(a)?;
        self.offset(sp, 1.0)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn power(&mut self, base: Var, exponent: Var) -> Result<Var> {
        self.apply(Primitive::Power, &[base, exponent])
    }

    pub fn cosine_rows(&mut self, memory: Var, key: Var) -> Result<Var> {
        self.apply(Primitive::CosineSimilarityRows, &[memory, key])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn circular_conv(&mut self, w: Var, shift: Var) -> Result<Var> {
        self.apply(Primitive::CircularConv, &[w, shift])
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Outer, &[a, b])
    }

    pub fn cumprod_exclusive(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::CumProdExclusive, &[a])
    }

    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Gather(index), &[a])
    }

    pub fn sigmoid_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.apply(Primitive::SigmoidCrossEntropy, &[logits, targets])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        self.apply(Primitive::SoftmaxCrossEntropy(class), &[logits])
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.rows(), a.cols(), a.data().iter().map(|&x| f(x)).collect())
}

fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = a.shape();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::new(c, r, data)
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.shape();
    let m = b.cols();
    let mut out = vec![0.0; n * m];
    if m == 1 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&a.data()[i * k..(i + 1) * k], b.data());
        }
    } else {
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = a.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                orow.iter_mut()
                    .zip(&b.data()[p * m..(p + 1) * m])
                    .for_each(|(o, bv)| *o += av * bv);
            }
        }
    }
    Tensor::new(n, m, out)
}

fn broadcast(name: &'static str, a: &Tensor, b: &Tensor, f: fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(a.rows(), a.cols(), data))
    } else if b.len() == 1 {
        let y = b.item();
        Ok(map(a, |x| f(x, y)))
    } else if a.len() == 1 {
        let x = a.item();
        Ok(map(b, |y| f(x, y)))
    } else {
        Err(Error::shape(
            name,
            format!("{} vs {}", shape_str(a), shape_str(b)),
        ))
    }
}
