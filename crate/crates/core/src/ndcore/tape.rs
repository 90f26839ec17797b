//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends a node holding its output value. Nodes produced
//! from inputs that require gradients also remember their parents, so that
//! [`Tape::backward`] can walk the tape in reverse and push adjoints to the
//! leaves. Leaf gradients accumulate across backward passes until
//! [`Tape::zero_grad`] is called; intermediate adjoints are scratch space
//! local to one pass.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean { x: Var, axis: usize },
    Concat(Vec<Var>),
    Pick { x: Var, index: usize },
    Row { x: Var, row: usize },
}

/// Primitive kinds accepted by [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Softmax,
    LogSoftmax,
    Mean { axis: usize },
    Concat,
    Neg,
    Log,
    Sum,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Ops on constants keep no parents: nothing upstream needs gradients.
        let op = if rg { op } else { Op::Leaf };
        self.push(value, op, rg)
    }

    /// Dispatches a primitive by kind. Unary kinds use `inputs[0]`.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(Error::Invalid(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Softmax => self.softmax(inputs[0]),
            OpKind::LogSoftmax => self.log_softmax(inputs[0]),
            OpKind::Mean { axis } => self.mean(inputs[0], axis),
            OpKind::Concat => self.concat(inputs),
            OpKind::Neg => Ok(self.neg(inputs[0])),
            OpKind::Log => Ok(self.log(inputs[0])),
            OpKind::Sum => Ok(self.sum(inputs[0])),
        }
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let out_shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(&ad[i * k..(i + 1) * k], bd);
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip != 0.0 {
                        axpy(aip, &bd[p * n..(p + 1) * n], orow);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.record(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.record(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x * c);
        self.record(value, Op::Scale(a, c), &[a])
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x + c);
        self.record(value, Op::Shift(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| -x);
        self.record(value, Op::Neg(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.record(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        self.record(value, Op::Tanh(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::ln);
        self.record(value, Op::Log(a), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.rowwise("softmax", a, softmax_row)?;
        Ok(self.record(value, Op::Softmax(a), &[a]))
    }

    /// Numerically stable `log(softmax(a))` over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.rowwise("log_softmax", a, log_softmax_row)?;
        Ok(self.record(value, Op::LogSoftmax(a), &[a]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("mean", &shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                axpy(1.0, &src[base..base + inner], &mut out[o * inner..(o + 1) * inner]);
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(value, Op::Mean { x: a, axis }, &[a]))
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(Error::Invalid("concat of zero tensors".into())),
        };
        if first.is_empty() {
            return Err(Error::shape("concat", &first, &[]));
        }
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat", &first, s));
            }
            widths.push(s[s.len() - 1]);
        }
        let outer: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Selects one element of a flat tensor as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(Error::shape("pick", t.shape(), &[index]));
        }
        let value = Tensor::scalar(t.data()[index]);
        Ok(self.record(value, Op::Pick { x: a, index }, &[a]))
    }

    /// Selects row `row` of a matrix (embedding lookup).
    pub fn row(&mut self, a: Var, row: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || row >= s[0] {
            return Err(Error::shape("row", s, &[row]));
        }
        let c = s[1];
        let value = Tensor::vector(self.value(a).data()[row * c..(row + 1) * c].to_vec());
        Ok(self.record(value, Op::Row { x: a, row }, &[a]))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    fn zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn rowwise(&self, op: &'static str, a: Var, f: fn(&[f64], &mut [f64])) -> Result<Tensor> {
        let t = self.value(a);
        let w = match t.shape().last() {
            Some(&w) if w > 0 => w,
            _ => return Err(Error::shape(op, t.shape(), &[])),
        };
        let mut out = vec![0.0; t.len()];
        for (src, dst) in t.data().chunks(w).zip(out.chunks_mut(w)) {
            f(src, dst);
        }
        Tensor::new(t.shape().to_vec(), out)
    }

    /// Reverse pass from a scalar `loss`; adds dLoss/dLeaf into every leaf
    /// that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => axpy(1.0, &g, acc.data_mut()),
                    slot @ None => {
                        *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = if tb.shape().len() == 2 { tb.shape()[1] } else { 1 };
                if wants(*a) {
                    let ga = slot(adj, *a, m * k);
                    let bd = tb.data();
                    for i in 0..m {
                        let grow = &mut ga[i * k..(i + 1) * k];
                        if n == 1 {
                            axpy(g[i], bd, grow);
                        } else {
                            for (p, gp) in grow.iter_mut().enumerate() {
                                *gp += dot(&g[i * n..(i + 1) * n], &bd[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                if wants(*b) {
                    let gb = slot(adj, *b, k * n);
                    let ad = ta.data();
                    for i in 0..m {
                        let arow = &ad[i * k..(i + 1) * k];
                        if n == 1 {
                            axpy(g[i], arow, gb);
                        } else {
                            for (p, &aip) in arow.iter().enumerate() {
                                axpy(aip, &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, 1.0)] {
                    if wants(v) {
                        axpy(s, g, slot(adj, v, g.len()));
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, -1.0)] {
                    if wants(v) {
                        axpy(s, g, slot(adj, v, g.len()));
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = self.value(*b).data();
                    let ga = slot(adj, *a, g.len());
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(bd) {
                        *d += gi * bi;
                    }
                }
                if wants(*b) {
                    let ad = self.value(*a).data();
                    let gb = slot(adj, *b, g.len());
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(ad) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => axpy(*c, g, slot(adj, *a, g.len())),
            Op::Shift(a) => axpy(1.0, g, slot(adj, *a, g.len())),
            Op::Neg(a) => axpy(-1.0, g, slot(adj, *a, g.len())),
            Op::Sigmoid(a) => {
                let ga = slot(adj, *a, g.len());
                for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = slot(adj, *a, g.len());
                for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::Log(a) => {
                let xd = self.value(*a).data();
                let ga = slot(adj, *a, g.len());
                for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(xd) {
                    *d += gi / x;
                }
            }
            Op::Softmax(a) => {
                let w = *node.value.shape().last().unwrap();
                let ga = slot(adj, *a, g.len());
                for ((gr, yr), dr) in g.chunks(w).zip(out.chunks(w)).zip(ga.chunks_mut(w)) {
                    let s = dot(gr, yr);
                    for ((d, &gi), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += y * (gi - s);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let w = *node.value.shape().last().unwrap();
                let ga = slot(adj, *a, g.len());
                for ((gr, yr), dr) in g.chunks(w).zip(out.chunks(w)).zip(ga.chunks_mut(w)) {
                    let s: f64 = gr.iter().sum();
                    for ((d, &gi), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += gi - y.exp() * s;
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                slot(adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis);
                let inv = 1.0 / len as f64;
                let gx = slot(adj, *x, outer * len * inner);
                for o in 0..outer {
                    let gsrc = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        axpy(inv, gsrc, &mut gx[base..base + inner]);
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let outer = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if wants(p) {
                        let gp = slot(adj, p, outer * w);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            axpy(1.0, src, &mut gp[o * w..(o + 1) * w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Pick { x, index } => {
                let n = self.value(*x).len();
                slot(adj, *x, n)[*index] += g[0];
            }
            Op::Row { x, row } => {
                let s = self.shape(*x);
                let (r, c) = (s[0], s[1]);
                let gx = slot(adj, *x, r * c);
                axpy(1.0, g, &mut gx[row * c..(row + 1) * c]);
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - m).exp();
        z += *d;
    }
    dst.iter_mut().for_each(|d| *d /= z);
}

fn log_softmax_row(src: &[f64], dst: &mut [f64]) {
    let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + src.iter().map(|&s| (s - m).exp()).sum::<f64>().ln();
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s - lse;
    }
}
