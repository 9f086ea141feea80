//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every example: each operation appends a
//! node holding its output, so inputs always precede the nodes that use
//! them and the backward sweep is a single reverse pass over the tape.
//! Parameters enter the tape by copy; [`Graph::backward`] writes their
//! gradients back into the [`ParamStore`] they came from.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    ParamRow { param: ParamId, row: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Softmax(Var),
    Sum(Var),
    SumSquares(Var),
    StackColumns(Vec<Var>),
    AddColumn(Var, Var),
    NegLog { src: Var, index: usize, floor: f64 },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::ParamRow { .. } => "param_row",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
            Op::StackColumns(_) => "stack_columns",
            Op::AddColumn(..) => "add_column",
            Op::NegLog { .. } => "neg_log",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only operation record.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

/// Elementwise operator selector for [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Hadamard,
    Tanh,
    Sigmoid,
    Scale(f64),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent partial sums, so it vectorizes; the
/// summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-major `[m,k] x [k,n]` product into a fresh buffer.
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 1 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&a[i * k..(i + 1) * k], b);
        }
        return out;
    }
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Interprets a tensor as a matrix for the product; vectors are columns on
/// the right and rows on the left.
fn as_matrix(t: &Tensor, left: bool) -> (usize, usize) {
    match (t.shape().len(), left) {
        (2, _) => (t.shape()[0], t.shape()[1]),
        (_, true) => (1, t.len()),
        (_, false) => (t.len(), 1),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_with(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Operator tag of each recorded node, in tape order.
    pub fn op_tags(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.tag()).collect()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; gradients stop here.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(Tensor::zeros(vec![n]))
    }

    /// The parameter's current value as a leaf. Repeated requests reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let mut value = store.value(id).clone();
        value.clear_grad();
        let v = self.push(Op::Param(id), value);
        self.param_nodes.insert(id, v);
        v
    }

    /// One row of a matrix parameter, as a vector leaf (embedding lookup).
    pub fn param_row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> Result<Var> {
        let table = store.value(id);
        if table.shape().len() != 2 || row >= table.rows() {
            return Err(Error::shape("param_row", table.shape(), &[row]));
        }
        let cols = table.cols();
        let data = table.data()[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Op::ParamRow { param: id, row }, Tensor::vector(data)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(ta, true);
        let (k2, n) = as_matrix(tb, false);
        if k != k2 || (ta.is_vector() && tb.is_vector()) {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let out = gemm(ta.data(), tb.data(), m, k, n);
        let shape = match (ta.is_vector(), tb.is_vector()) {
            (false, false) => vec![m, n],
            (false, true) => vec![m],
            _ => vec![n],
        };
        Ok(self.push(Op::MatMul(a, b), Tensor::new(shape, out)))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op.tag(), ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(op, Tensor::new(shape, data)))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let shape = t.shape().to_vec();
        self.push(op, Tensor::new(shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Hadamard(a, b), |x, y| x * y)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Hadamard => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Config(format!(
                "{op:?} takes {arity} operands, got {}",
                args.len()
            )));
        }
        Ok(match op {
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Sub => self.sub(args[0], args[1])?,
            Elementwise::Hadamard => self.hadamard(args[0], args[1])?,
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Scale(f) => self.scale(args[0], f),
        })
    }

    /// Sums a nonempty list of same-shaped nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts.split_first().ok_or(Error::Empty { op: "add_all" })?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty { op: "concat" });
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !t.is_vector() {
                return Err(Error::shape("concat", t.shape(), &[]));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if !t.is_vector() || start + len > t.len() {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let data = t.data()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { src, start }, Tensor::vector(data)))
    }

    pub fn softmax(&mut self, scores: Var) -> Result<Var> {
        let t = self.value(scores);
        if t.is_empty() || !t.is_vector() {
            return Err(Error::Empty { op: "softmax" });
        }
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(Op::Softmax(scores), Tensor::vector(data)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push(Op::SumSquares(a), Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.hadamard(a, b)?;
        Ok(self.sum(p))
    }

    /// Packs equal-length vectors as the columns of a `[d, n]` matrix.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let first = *cols.first().ok_or(Error::Empty { op: "stack_columns" })?;
        let d = self.value(first).len();
        let n = cols.len();
        let mut data = vec![0.0; d * n];
        for (j, &c) in cols.iter().enumerate() {
            let t = self.value(c);
            if !t.is_vector() || t.len() != d {
                return Err(Error::shape("stack_columns", self.shape(first), t.shape()));
            }
            for (r, v) in t.data().iter().enumerate() {
                data[r * n + j] = *v;
            }
        }
        Ok(self.push(Op::StackColumns(cols.to_vec()), Tensor::matrix(d, n, data)))
    }

    /// Adds the vector `v` to every column of matrix `m`.
    pub fn add_column(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || !tv.is_vector() || tv.len() != tm.rows() {
            return Err(Error::shape("add_column", tm.shape(), tv.shape()));
        }
        let cols = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tv.data()[i / cols])
            .collect();
        let shape = tm.shape().to_vec();
        Ok(self.push(Op::AddColumn(m, v), Tensor::new(shape, data)))
    }

    /// `-ln(max(p[index], floor))` as a scalar.
    pub fn neg_log(&mut self, probs: Var, index: usize, floor: f64) -> Result<Var> {
        let t = self.value(probs);
        if index >= t.len() {
            return Err(Error::shape("neg_log", t.shape(), &[index]));
        }
        let p = t.data()[index].max(floor);
        Ok(self.push(Op::NegLog { src: probs, index, floor }, Tensor::scalar(-p.ln())))
    }

    /// Reverse sweep from a scalar node, accumulating into parameter gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_scaled(loss, 1.0, store)
    }

    /// Like [`Graph::backward`] with the seed gradient set to `seed`, so a
    /// minibatch mean can be accumulated example by example.
    pub fn backward_scaled(&self, loss: Var, seed: f64, store: &mut ParamStore) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed; lt.len()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = store.get_mut(*id).value.grad_mut();
                    slot.iter_mut().zip(&g).for_each(|(a, d)| *a += d);
                }
                Op::ParamRow { param, row } => {
                    let p = store.get_mut(*param);
                    let cols = p.value.cols();
                    let slot = p.value.grad_mut();
                    slot[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, d)| *a += d);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = as_matrix(ta, true);
                    let (_, n) = as_matrix(tb, false);
                    let (ad, bd) = (ta.data(), tb.data());
                    if n == 1 {
                        // Matrix-vector: dA is the outer product g b^T, dB = A^T g.
                        accumulate_with(&mut grads[a.0], m * k, |da| {
                            for (row, gi) in da.chunks_mut(k).zip(&g) {
                                row.iter_mut().zip(bd).for_each(|(d, bv)| *d += gi * bv);
                            }
                        });
                        accumulate_with(&mut grads[b.0], k, |db| {
                            for (row, gi) in ad.chunks(k).zip(&g) {
                                db.iter_mut().zip(row).for_each(|(d, av)| *d += gi * av);
                            }
                        });
                        continue;
                    }
                    // dA = dC . B^T
                    accumulate_with(&mut grads[a.0], m * k, |da| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                da[i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    // dB = A^T . dC
                    accumulate_with(&mut grads[b.0], k * n, |db| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let drow = &mut db[p * n..(p + 1) * n];
                                drow.iter_mut().zip(grow).for_each(|(d, x)| *d += aip * x);
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
                Op::Hadamard(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let da: Vec<f64> = g.iter().zip(tb).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(ta).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Tanh(a) => {
                    let corrupt = fault::tanh_backward_corrupted();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(out)
                        .map(|(x, y)| if corrupt { x * (1.0 - y) } else { x * (1.0 - y * y) })
                        .collect();
                    accumulate(&mut grads[a.0], &da);
                }
                Op::Sigmoid(a) => {
                    let da: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                Op::Scale(a, f) => {
                    let da: Vec<f64> = g.iter().map(|x| x * f).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut grads[p.0], &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { src, start } => {
                    let n = self.value(*src).len();
                    let start = *start;
                    accumulate_with(&mut grads[src.0], n, |ds| {
                        ds[start..start + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(d, x)| *d += x);
                    });
                }
                Op::Softmax(a) => {
                    let inner: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                    let da: Vec<f64> = g.iter().zip(out).map(|(x, y)| y * (x - inner)).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads[a.0], &vec![g[0]; n]);
                }
                Op::SumSquares(a) => {
                    let da: Vec<f64> = self.value(*a).data().iter().map(|v| 2.0 * v * g[0]).collect();
                    accumulate(&mut grads[a.0], &da);
                }
                Op::StackColumns(cols) => {
                    let n = cols.len();
                    for (j, c) in cols.iter().enumerate() {
                        let col: Vec<f64> = g.iter().skip(j).step_by(n).copied().collect();
                        accumulate(&mut grads[c.0], &col);
                    }
                }
                Op::AddColumn(m, v) => {
                    accumulate(&mut grads[m.0], &g);
                    let cols = self.value(*m).cols();
                    let dv: Vec<f64> = g.chunks(cols).map(|row| row.iter().sum()).collect();
                    accumulate(&mut grads[v.0], &dv);
                }
                Op::NegLog { src, index, floor } => {
                    let t = self.value(*src);
                    let p = t.data()[*index];
                    let n = t.len();
                    let index = *index;
                    let floor = *floor;
                    accumulate_with(&mut grads[src.0], n, |ds| {
                        if p > floor {
                            ds[index] -= g[0] / p;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

/// Switch for deliberately breaking one backward rule, so that tests can
/// confirm the gradient checker notices.
pub mod fault {
    #[cfg(feature = "fault-injection")]
    use std::cell::Cell;

    #[cfg(feature = "fault-injection")]
    thread_local! {
        static TANH_BACKWARD: Cell<bool> = const { Cell::new(false) };
    }

    pub const AVAILABLE: bool = cfg!(feature = "fault-injection");

    /// Replaces `1 - tanh^2` with `1 - tanh` on this thread while `on`.
    /// Returns whether the switch exists in this build.
    pub fn corrupt_tanh_backward(on: bool) -> bool {
        #[cfg(feature = "fault-injection")]
        TANH_BACKWARD.with(|c| c.set(on));
        let _ = on;
        AVAILABLE
    }

    #[inline]
    pub(crate) fn tanh_backward_corrupted() -> bool {
        #[cfg(feature = "fault-injection")]
        {
            TANH_BACKWARD.with(|c| c.get())
        }
        #[cfg(not(feature = "fault-injection"))]
        {
            false
        }
    }
}
