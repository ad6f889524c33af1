//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive operation of one forward pass as a
//! node. Nodes are append-only; [`Tape::backward`] walks them in reverse
//! and accumulates adjoints for every node that depends on a leaf created
//! with [`Tape::leaf`]. Constants never receive gradients, which is how
//! stop-gradient terms (TD targets, advantage weights, hinge weights) are
//! expressed: evaluate the value, then feed it back in with
//! [`Tape::constant`] or [`Tape::detach`].
//!
//! Conventions:
//! - ReLU and |x| have subgradient 0 at 0.
//! - `max`/`min` route the gradient to the attaining argument, ties to the
//!   first argument.
//! - `clip` passes gradient on the closed interval `[lo, hi]`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Dense { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Max(usize, usize),
    Min(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    Abs(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clip(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Gather(usize, Vec<usize>),
    RepeatCols(usize, usize),
    RepeatRows(usize, usize),
    Reshape(usize),
    ConcatCols(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one traced computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` when it does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        v.index
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[self.idx(v)]
    }

    /// Differentiable input (a parameter or an attacked observation).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Re-enters the current value of `v` as a constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(a);
        let value = n.value.map(f);
        let g = n.needs_grad;
        self.push(value, op, g)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.value.shape() != nb.value.shape() {
            return Err(shape_err(name, &na.value, &nb.value));
        }
        let value = na.value.zip_map(&nb.value, f);
        let g = na.needs_grad || nb.needs_grad;
        Ok(self.push(value, op, g))
    }

    /// Affine map `x Wᵀ + b` for `x` of shape `[n]` or `[batch, n]` and `W` of shape `[m, n]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.idx(x), self.idx(w));
        let bi = b.map(|b| self.idx(b));
        let xv = &self.nodes[xi].value;
        let wv = &self.nodes[wi].value;
        let bv = bi.map(|i| &self.nodes[i].value);
        let value = dense_value(xv, wv, bv)?;
        let g = self.nodes[xi].needs_grad
            || self.nodes[wi].needs_grad
            || bi.is_some_and(|i| self.nodes[i].needs_grad);
        Ok(self.push(
            value,
            Op::Dense {
                x: xi,
                w: wi,
                b: bi,
            },
            g,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.idx(a), self.idx(b));
        self.binary("add", a, b, op, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.idx(a), self.idx(b));
        self.binary("sub", a, b, op, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(self.idx(a), self.idx(b));
        self.binary("mul", a, b, op, |x, y| x * y)
    }

    /// Elementwise maximum; the gradient goes to `a` on ties.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Max(self.idx(a), self.idx(b));
        self.binary("max", a, b, op, |x, y| if x >= y { x } else { y })
    }

    /// Elementwise minimum; the gradient goes to `a` on ties.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Min(self.idx(a), self.idx(b));
        self.binary("min", a, b, op, |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let op = Op::Scale(self.idx(a), k);
        self.unary(a, op, |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds a constant scalar to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let op = Op::Shift(self.idx(a));
        self.unary(a, op, |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let op = Op::Relu(self.idx(a));
        self.unary(a, op, relu_scalar)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let op = Op::Abs(self.idx(a));
        self.unary(a, op, f64::abs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let op = Op::Exp(self.idx(a));
        self.unary(a, op, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let op = Op::Log(self.idx(a));
        self.unary(a, op, f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let op = Op::Square(self.idx(a));
        self.unary(a, op, |x| x * x)
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let op = Op::Clip(self.idx(a), lo, hi);
        self.unary(a, op, |x| x.clamp(lo, hi))
    }

    /// Sum of all elements (scalar result).
    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.data().iter().sum();
        let g = n.needs_grad;
        let op = Op::Sum(self.idx(a));
        self.push(Tensor::from_raw(vec![], vec![s]), op, g)
    }

    /// Mean of all elements (scalar result).
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.data().iter().sum::<f64>() / n.value.len() as f64;
        let g = n.needs_grad;
        let op = Op::Mean(self.idx(a));
        self.push(Tensor::from_raw(vec![], vec![s]), op, g)
    }

    /// Row sums of a `[batch, k]` matrix, giving `[batch]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let r = n.value.rows();
        let data = (0..r).map(|i| n.value.row(i).iter().sum()).collect();
        let g = n.needs_grad;
        let op = Op::SumCols(self.idx(a));
        self.push(Tensor::from_raw(vec![r], data), op, g)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let value = rowwise(&n.value, crate::tensor::softmax);
        let g = n.needs_grad;
        let op = Op::Softmax(self.idx(a));
        self.push(value, op, g)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let value = rowwise(&n.value, crate::tensor::log_softmax);
        let g = n.needs_grad;
        let op = Op::LogSoftmax(self.idx(a));
        self.push(value, op, g)
    }

    /// Picks `a[i, index[i]]` for every row, giving `[batch]`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let n = self.node(a);
        let (r, c) = (n.value.rows(), n.value.cols());
        if n.value.rank() != 2 || index.len() != r {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: n.value.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= c) {
            return Err(Error::ActionOutOfRange {
                index: bad,
                count: c,
            });
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(i, &j)| n.value.data()[i * c + j])
            .collect();
        let g = n.needs_grad;
        let op = Op::Gather(self.idx(a), index.to_vec());
        Ok(self.push(Tensor::from_raw(vec![r], data), op, g))
    }

    /// Broadcasts a `[batch]` vector across `k` columns.
    pub fn repeat_cols(&mut self, a: Var, k: usize) -> Var {
        let n = self.node(a);
        let r = n.value.len();
        let data = n
            .value
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, k))
            .collect();
        let g = n.needs_grad;
        let op = Op::RepeatCols(self.idx(a), k);
        self.push(Tensor::from_raw(vec![r, k], data), op, g)
    }

    /// Broadcasts a `[k]` vector across `rows` rows.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Var {
        let n = self.node(a);
        let k = n.value.len();
        let mut data = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            data.extend_from_slice(n.value.data());
        }
        let g = n.needs_grad;
        let op = Op::RepeatRows(self.idx(a), rows);
        self.push(Tensor::from_raw(vec![rows, k], data), op, g)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.node(a);
        let value = n.value.reshape(shape)?;
        let g = n.needs_grad;
        let op = Op::Reshape(self.idx(a));
        Ok(self.push(value, op, g))
    }

    /// Joins `[batch, n]` and `[batch, m]` into `[batch, n + m]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.value.rank() != 2 || nb.value.rank() != 2 || na.value.rows() != nb.value.rows() {
            return Err(shape_err("concat_cols", &na.value, &nb.value));
        }
        let (r, ca, cb) = (na.value.rows(), na.value.cols(), nb.value.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(na.value.row(i));
            data.extend_from_slice(nb.value.row(i));
        }
        let g = na.needs_grad || nb.needs_grad;
        let op = Op::ConcatCols(self.idx(a), self.idx(b));
        Ok(self.push(Tensor::from_raw(vec![r, ca + cb], data), op, g))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// The tape itself is not modified, so calling this twice gives
    /// bit-identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        let root = &self.nodes[loss.index].value;
        if root.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape().to_vec()));
        }
        if !root.item().is_finite() {
            return Err(Error::NonFiniteLoss(root.item()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                g.filter(|_| node.needs_grad)
                    .map(|g| Tensor::from_raw(node.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |j: usize| self.nodes[j].value.data();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[j].needs_grad {
                return;
            }
            let slot = grads[j].get_or_insert_with(|| vec![0.0; self.nodes[j].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Dense { x, w, b } => {
                let (x, w) = (*x, *w);
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / n;
                let (xd, wd) = (xv.data(), wv.data());
                acc(x, &mut |gx| {
                    for r in 0..rows {
                        let g = &gy[r * m..(r + 1) * m];
                        let out = &mut gx[r * n..(r + 1) * n];
                        for (o, &go) in g.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wrow = &wd[o * n..(o + 1) * n];
                            for (dst, &wv) in out.iter_mut().zip(wrow) {
                                *dst += go * wv;
                            }
                        }
                    }
                });
                acc(w, &mut |gw| {
                    for r in 0..rows {
                        let g = &gy[r * m..(r + 1) * m];
                        let xr = &xd[r * n..(r + 1) * n];
                        for (o, &go) in g.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let dst = &mut gw[o * n..(o + 1) * n];
                            for (d, &xv) in dst.iter_mut().zip(xr) {
                                *d += go * xv;
                            }
                        }
                    }
                });
                if let Some(b) = *b {
                    acc(b, &mut |gb| {
                        for r in 0..rows {
                            for (d, &g) in gb.iter_mut().zip(&gy[r * m..(r + 1) * m]) {
                                *d += g;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| {
                    for (d, &v) in g.iter_mut().zip(gy) {
                        *d -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gy[k] * bv[k];
                    }
                });
                acc(*b, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gy[k] * av[k];
                    }
                });
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let is_max = matches!(node.op, Op::Max(..));
                let (av, bv) = (val(*a), val(*b));
                let first: Vec<bool> = av
                    .iter()
                    .zip(bv)
                    .map(|(x, y)| if is_max { x >= y } else { x <= y })
                    .collect();
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        if first[k] {
                            g[k] += gy[k];
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for k in 0..g.len() {
                        if !first[k] {
                            g[k] += gy[k];
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                let k = *k;
                acc(*a, &mut |g| {
                    for (d, &v) in g.iter_mut().zip(gy) {
                        *d += k * v;
                    }
                });
            }
            Op::Shift(a) | Op::Reshape(a) => acc(*a, &mut |g| add_into(g, gy)),
            Op::Relu(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        if av[k] > 0.0 {
                            g[k] += gy[k];
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        if av[k] > 0.0 {
                            g[k] += gy[k];
                        } else if av[k] < 0.0 {
                            g[k] -= gy[k];
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |g| {
                for k in 0..g.len() {
                    g[k] += gy[k] * y[k];
                }
            }),
            Op::Log(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gy[k] / av[k];
                    }
                });
            }
            Op::Square(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += 2.0 * av[k] * gy[k];
                    }
                });
            }
            Op::Clip(a, lo, hi) => {
                let av = val(*a);
                let (lo, hi) = (*lo, *hi);
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        if av[k] >= lo && av[k] <= hi {
                            g[k] += gy[k];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |g| {
                for d in g.iter_mut() {
                    *d += gy[0];
                }
            }),
            Op::Mean(a) => {
                let n = self.nodes[*a].value.len() as f64;
                acc(*a, &mut |g| {
                    for d in g.iter_mut() {
                        *d += gy[0] / n;
                    }
                });
            }
            Op::SumCols(a) => {
                let c = self.nodes[*a].value.cols();
                acc(*a, &mut |g| {
                    for (k, d) in g.iter_mut().enumerate() {
                        *d += gy[k / c];
                    }
                });
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                acc(*a, &mut |g| {
                    for r in 0..y.len() / c {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &gy[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            g[r * c + k] += yr[k] * (gr[k] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let c = node.value.cols();
                acc(*a, &mut |g| {
                    for r in 0..y.len() / c {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &gy[r * c..(r + 1) * c];
                        let s: f64 = gr.iter().sum();
                        for k in 0..c {
                            g[r * c + k] += gr[k] - yr[k].exp() * s;
                        }
                    }
                });
            }
            Op::Gather(a, index) => {
                let c = self.nodes[*a].value.cols();
                acc(*a, &mut |g| {
                    for (r, &j) in index.iter().enumerate() {
                        g[r * c + j] += gy[r];
                    }
                });
            }
            Op::RepeatCols(a, k) => {
                let k = *k;
                acc(*a, &mut |g| {
                    for (r, d) in g.iter_mut().enumerate() {
                        *d += gy[r * k..(r + 1) * k].iter().sum::<f64>();
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let cb = self.nodes[*b].value.cols();
                let w = ca + cb;
                acc(*a, &mut |g| {
                    for (k, d) in g.iter_mut().enumerate() {
                        *d += gy[(k / ca) * w + k % ca];
                    }
                });
                acc(*b, &mut |g| {
                    for (k, d) in g.iter_mut().enumerate() {
                        *d += gy[(k / cb) * w + ca + k % cb];
                    }
                });
            }
            Op::RepeatRows(a, rows) => {
                let rows = *rows;
                acc(*a, &mut |g| {
                    let k = g.len();
                    for r in 0..rows {
                        for (d, &v) in g.iter_mut().zip(&gy[r * k..(r + 1) * k]) {
                            *d += v;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn relu_scalar(x: f64) -> f64 {
    // Normalises -0.0 to 0.0 as well.
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn rowwise(t: &Tensor, f: fn(&[f64]) -> Vec<f64>) -> Tensor {
    let c = t.cols();
    let mut out = Vec::with_capacity(t.len());
    for r in 0..t.len() / c.max(1) {
        out.extend(f(&t.data()[r * c..(r + 1) * c]));
    }
    Tensor::from_raw(t.shape().to_vec(), out)
}

fn dense_value(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(shape_err("dense", x, w));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let rows = match x.rank() {
        1 if x.len() == n => 1,
        2 if x.cols() == n => x.rows(),
        _ => return Err(shape_err("dense", x, w)),
    };
    if let Some(b) = b {
        if b.shape() != [m] {
            return Err(shape_err("dense bias", w, b));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = Vec::with_capacity(rows * m);
    for r in 0..rows {
        let xr = &xd[r * n..(r + 1) * n];
        for o in 0..m {
            let wr = &wd[o * n..(o + 1) * n];
            let mut s = b.map_or(0.0, |b| b.data()[o]);
            for (a, c) in wr.iter().zip(xr) {
                s += a * c;
            }
            out.push(s);
        }
    }
    let shape = if x.rank() == 1 { vec![m] } else { vec![rows, m] };
    Ok(Tensor::from_raw(shape, out))
}

/// Untraced affine map `W x + b` (batched over rows of `x`).
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    dense_value(input, weights, Some(bias))
}

/// Untraced elementwise `max(0, x)`; `-0.0` maps to `0.0`.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(relu_scalar)
}

/// Untraced row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    rowwise(logits, crate::tensor::softmax)
}
