//! Wengert tape over dense tensors.
//!
//! Nodes are appended in evaluation order, so every node's inputs precede it
//! and a single reverse sweep visits each node once. Leaves are either
//! trainable (`var`) or constant; gradient work is skipped for any subgraph
//! that does not depend on a trainable leaf.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Tanh(usize),
    Swish(usize),
    Square(usize),
    Sin(usize),
    Clamp(usize, f64, f64),
    SliceCols(usize, usize, usize),
    SumRows(usize),
    Sum(usize),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    /// Drops all nodes. Handles issued before the reset must not be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients flow to it.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.index].value.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { op, value, requires_grad });
        Var { index, tape: self.id }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::DetachedNode { index: v.index });
        }
        Ok(v.index)
    }

    fn emit(&mut self, op: Op, value: Tensor, inputs: &[usize], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(op, value, rg))
    }

    fn same_shape(&self, a: usize, b: usize, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::ShapeMismatch { op, detail: format!("{:?} vs {:?}", sa, sb) });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        self.emit(Op::MatMul(a, b), v, &[a, b], "matmul")
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(bias)?);
        let (x, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        let cols = x.cols();
        if bv.len() != cols {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + bias {:?}", x.shape(), bv.shape()),
            });
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let v = Tensor::with_shape_of(out, x);
        self.emit(Op::AddRow(a, b), v, &[a, b], "add_row")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, "add")?;
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x + y);
        self.emit(Op::Add(a, b), v, &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, "sub")?;
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x - y);
        self.emit(Op::Sub(a, b), v, &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, "mul")?;
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x * y);
        self.emit(Op::Mul(a, b), v, &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(|x| x * c);
        self.emit(Op::Scale(a, c), v, &[a], "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(|x| x + c);
        self.emit(Op::AddScalar(a), v, &[a], "add_scalar")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(f64::exp);
        self.emit(Op::Exp(a), v, &[a], "exp")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(f64::tanh);
        self.emit(Op::Tanh(a), v, &[a], "tanh")
    }

    pub fn swish(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(swish);
        self.emit(Op::Swish(a), v, &[a], "swish")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(|x| x * x);
        self.emit(Op::Square(a), v, &[a], "square")
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(f64::sin);
        self.emit(Op::Sin(a), v, &[a], "sin")
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(|x| x.clamp(lo, hi));
        self.emit(Op::Clamp(a, lo, hi), v, &[a], "clamp")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let a = self.check(a)?;
        let x = &self.nodes[a].value;
        let (rows, cols) = (x.rows(), x.cols());
        if start >= end || end > cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("{}..{} of {} columns", start, end, cols),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&x.row(r)[start..end]);
        }
        let v = Tensor::matrix(rows, w, out)?;
        self.emit(Op::SliceCols(a, start, end), v, &[a], "slice_cols")
    }

    /// `[rows, cols] -> [rows, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let x = &self.nodes[a].value;
        let rows = x.rows();
        let out: Vec<f64> = (0..rows).map(|r| x.row(r).iter().sum()).collect();
        let v = Tensor::matrix(rows, 1, out)?;
        self.emit(Op::SumRows(a), v, &[a], "sum_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let s: f64 = self.nodes[a].value.data().iter().sum();
        self.emit(Op::Sum(a), Tensor::scalar(s), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Reverse sweep from a scalar `output`; returns one gradient per `wrt`
    /// entry (zeros when the output does not depend on it).
    pub fn backward(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let out = self.check(output)?;
        let wrt_idx: Vec<usize> = wrt.iter().map(|&w| self.check(w)).collect::<Result<_>>()?;
        let shape = self.nodes[out].value.shape();
        if self.nodes[out].value.len() != 1 {
            return Err(Error::NonScalarOutput { shape: shape.to_vec() });
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(out + 1);
        adj.resize_with(out + 1, || None);
        adj[out] = Some(Tensor::with_shape_of(vec![1.0], &self.nodes[out].value));

        for i in (0..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut adj);
            adj[i] = Some(g);
        }

        Ok(wrt_idx
            .iter()
            .map(|&w| match adj.get(w).and_then(Option::as_ref) {
                Some(g) if self.nodes[w].requires_grad || w == out => g.clone(),
                _ => Tensor::zeros(self.nodes[w].value.shape()),
            })
            .collect())
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].requires_grad;
        let mut acc = |i: usize, t: Tensor| match &mut adj[i] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    acc(a, g.matmul_t(val(b)).reshape_like(val(a)));
                }
                if needs(b) {
                    acc(b, val(a).t_matmul(g).reshape_like(val(b)));
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    acc(a, g.clone());
                }
                if needs(b) {
                    let cols = g.cols();
                    let mut s = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (acc_c, &v) in s.iter_mut().zip(g.row(r)) {
                            *acc_c += v;
                        }
                    }
                    acc(b, Tensor::with_shape_of(s, val(b)));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    acc(a, g.clone());
                }
                if needs(b) {
                    acc(b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    acc(a, g.clone());
                }
                if needs(b) {
                    acc(b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    acc(a, g.zip_map(val(b), |gv, bv| gv * bv));
                }
                if needs(b) {
                    acc(b, g.zip_map(val(a), |gv, av| gv * av));
                }
            }
            Op::Scale(a, c) => acc(a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(a, g.clone()),
            Op::Exp(a) => acc(a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Tanh(a) => acc(a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Swish(a) => acc(
                a,
                g.zip_map(val(a), |gv, x| {
                    let s = sigmoid(x);
                    gv * (s + x * s * (1.0 - s))
                }),
            ),
            Op::Square(a) => acc(a, g.zip_map(val(a), |gv, x| 2.0 * gv * x)),
            Op::Sin(a) => acc(a, g.zip_map(val(a), |gv, x| gv * x.cos())),
            Op::Clamp(a, lo, hi) => acc(
                a,
                g.zip_map(val(a), |gv, x| if x >= lo && x <= hi { gv } else { 0.0 }),
            ),
            Op::SliceCols(a, start, end) => {
                let x = val(a);
                let (rows, cols) = (x.rows(), x.cols());
                let w = end - start;
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    out[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(a, Tensor::with_shape_of(out, x));
            }
            Op::SumRows(a) => {
                let x = val(a);
                let cols = x.cols();
                let mut out = Vec::with_capacity(x.len());
                for &gv in g.data() {
                    out.extend(std::iter::repeat_n(gv, cols));
                }
                acc(a, Tensor::with_shape_of(out, x));
            }
            Op::Sum(a) => {
                let x = val(a);
                acc(a, Tensor::with_shape_of(vec![g.data()[0]; x.len()], x));
            }
        }
    }
}

impl Tensor {
    fn reshape_like(self, like: &Tensor) -> Tensor {
        Tensor::with_shape_of(self.into_data(), like)
    }
}
