//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of a forward pass as a node. Calling
//! [`Graph::backward`] on a `1 × 1` node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node that depends on a
//! parameter leaf.
//!
//! Binary elementwise operations broadcast along any axis of length one, so a
//! `1 × n` bias adds to an `m × n` activation and an `m × 1` library-size column
//! scales an `m × n` frequency matrix. Gradients of broadcast operands are
//! reduced back to the operand shape.
//!
//! ```
//! use cradle_core::numerics::{Graph, Matrix};
//!
//! let mut g = Graph::new();
//! let w = g.param(Matrix::row_vector(vec![0.0]));
//! let y = g.softplus(w);
//! let loss = g.sum(y);
//! let grads = g.backward(loss);
//! assert!((grads.get(w).unwrap().item() - 0.5).abs() < 1e-15);
//! ```

use super::matrix::Matrix;
use super::special::{digamma, ln_gamma, sigmoid, softplus};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Lgamma(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    SumCols(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    StraightThrough(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradient table produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss through a parameter.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize), what: &str) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("{what}: cannot broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(shape: (usize, usize), i: usize, j: usize) -> usize {
    let r = if shape.0 == 1 { 0 } else { i };
    let c = if shape.1 == 1 { 0 } else { j };
    r * shape.1 + c
}

fn broadcast_zip(a: &Matrix, b: &Matrix, what: &str, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (rows, cols) = broadcast_shape(a.shape(), b.shape(), what);
    let (sa, sb) = (a.shape(), b.shape());
    let (da, db) = (a.data(), b.data());
    Matrix::from_fn(rows, cols, |i, j| f(da[bidx(sa, i, j)], db[bidx(sb, i, j)]))
}

/// Sum a broadcast gradient back down to `shape`.
fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    let gs = g.shape();
    {
        let od = out.data_mut();
        for i in 0..gs.0 {
            for j in 0..gs.1 {
                od[bidx(shape, i, j)] += g.get(i, j);
            }
        }
    }
    out
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), "add", |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), "sub", |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), "mul", |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        let rg = self.rg(a);
        self.push(value, Op::Neg(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn lgamma(&mut self, a: Var) -> Var {
        let value = self.value(a).map(ln_gamma);
        let rg = self.rg(a);
        self.push(value, Op::Lgamma(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Row sums, as an `m × 1` node.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Matrix::col_vector((0..x.rows()).map(|i| x.row(i).iter().sum()).collect());
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::hconcat(&mats);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let value = Matrix::from_fn(x.rows(), len, |i, j| x.get(i, start + j));
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let value = self.value(a).select_rows(indices);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, indices.to_vec()), rg)
    }

    /// Rounds to {0, 1} in the forward pass and passes the gradient through
    /// unchanged in the backward pass.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.5 { 1.0 } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::StraightThrough(a), rg)
    }

    /// Applies a unary primitive selected by name; unknown names are an error.
    pub fn unary(&mut self, name: &str, a: Var) -> Result<Var> {
        Ok(match name {
            "identity" => a,
            "neg" => self.neg(a),
            "relu" => self.relu(a),
            "softplus" => self.softplus(a),
            "sigmoid" => self.sigmoid(a),
            "exp" => self.exp(a),
            "log" => self.log(a),
            "lgamma" => self.lgamma(a),
            "softmax" => self.softmax_rows(a),
            "log_softmax" => self.log_softmax_rows(a),
            "sum" => self.sum(a),
            other => {
                return Err(Error::Validation(format!(
                    "unsupported primitive '{other}'"
                )))
            }
        })
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let y = &node.value;
            let acc = |v: Var, contrib: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !self.rg(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    // keep leaf gradients for the caller
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.matmul_t(self.value(*b));
                        acc(*a, ga, &mut grads);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t_matmul(&g);
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(*a, reduce_to(g.clone(), self.value(*a).shape()), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, reduce_to(g, self.value(*b).shape()), &mut grads);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        acc(*a, reduce_to(g.clone(), self.value(*a).shape()), &mut grads);
                    }
                    if self.rg(*b) {
                        let gb = reduce_to(g.map(|x| -x), self.value(*b).shape());
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let ga = broadcast_zip(&g, vb, "mul-grad", |x, y| x * y);
                        acc(*a, reduce_to(ga, va.shape()), &mut grads);
                    }
                    if self.rg(*b) {
                        let gb = broadcast_zip(&g, va, "mul-grad", |x, y| x * y);
                        acc(*b, reduce_to(gb, vb.shape()), &mut grads);
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(*a, g.map(|x| x * k), &mut grads);
                }
                Op::AddScalar(a) => acc(*a, g, &mut grads),
                Op::Neg(a) => acc(*a, g.map(|x| -x), &mut grads),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(*a, ga, &mut grads);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(self.value(*a), |g, x| g * sigmoid(x));
                    acc(*a, ga, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(y, |g, s| g * s * (1.0 - s));
                    acc(*a, ga, &mut grads);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(y, |g, e| g * e);
                    acc(*a, ga, &mut grads);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |g, x| g / x);
                    acc(*a, ga, &mut grads);
                }
                Op::Lgamma(a) => {
                    let ga = g.zip_map(self.value(*a), |g, x| g * digamma(x));
                    acc(*a, ga, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = g;
                    for i in 0..ga.rows() {
                        let yr = y.row(i);
                        let dot: f64 = ga.row(i).iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (gv, &yv) in ga.row_mut(i).iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g;
                    for i in 0..ga.rows() {
                        let yr = y.row(i);
                        let total: f64 = ga.row(i).iter().sum();
                        for (gv, &ly) in ga.row_mut(i).iter_mut().zip(yr) {
                            *gv -= ly.exp() * total;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Matrix::filled(r, c, g.item()), &mut grads);
                }
                Op::SumCols(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0)), &mut grads);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        if self.rg(p) {
                            let gp = Matrix::from_fn(r, c, |i, j| g.get(i, offset + j));
                            acc(p, gp, &mut grads);
                        }
                        offset += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..g.cols() {
                            ga.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::GatherRows(a, indices) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *dst += src;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::StraightThrough(a) => acc(*a, g, &mut grads),
            }
        }
        Gradients { grads }
    }
}
