//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and leaves
//! `d loss / d node` for every node that depends on a trainable leaf. A graph
//! is built for one step and thrown away; it cannot be backpropagated twice.
//!
//! Leaves come in three kinds:
//!
//! - [`Graph::input`]: data and stop-gradient values. Never receive gradient.
//! - [`Graph::variable`]: free leaves that do receive gradient.
//! - [`Graph::param`]: copies of a [`ParamStore`] entry; their gradients are
//!   pushed back with [`Graph::accumulate_param_grads`].

use crate::error::{Error, Result};
use crate::kernels::{self, AxisLayout, BatchLayout, ConvLayout};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How [`Graph::matmul`] pairs the operand axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contraction {
    /// Contract axis `i` of the left operand against the rows of a `[m, j]`
    /// right operand; the axis is replaced by `j`.
    Axis(usize),
    /// Like `Axis` on the left operand's last axis.
    Last,
    /// `[g, m, k] x [g, k, n] -> [g, m, n]`, or `[g, n, k]` on the right when
    /// `transpose_rhs` is set.
    Batched { transpose_rhs: bool },
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Variable,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    AddExpand { x: Var, b: Var, axis: usize },
    ContractAxis { x: Var, w: Var, layout: AxisLayout },
    Batched { a: Var, b: Var, layout: BatchLayout },
    Concat { a: Var, b: Var, pre: usize, na: usize, nb: usize, post: usize },
    Sigmoid(Var),
    Gelu(Var),
    Softmax { x: Var, pre: usize, len: usize, post: usize },
    Gate { g: Var, a: Var, b: Var },
    Conv { x: Var, w: Var, bias: Var, layout: ConvLayout },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    L2Normalize { x: Var, norms: Vec<f64> },
    EmbedValues { x: Var, w: Var, rows: usize, vars: usize, dim: usize },
    MseLoss { pred: Var, target: Var },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    (pre, shape[axis], post)
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: operands have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant leaf. Gradient never flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A leaf that receives gradient but is not tied to a parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Variable, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.tensor(id);
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.push(value, Op::Param(id), true)
    }

    /// Copies `v` into a new constant leaf, cutting the gradient path.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let t = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let t = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// Adds `b` to every trailing slice of `x`; `b`'s shape must be a suffix
    /// of `x`'s.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        let (xs, bs) = (xt.shape(), bt.shape());
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::shape(format!(
                "add_bias: bias shape {bs:?} is not a suffix of {xs:?}"
            )));
        }
        let w = bt.len();
        let mut data = xt.data().to_vec();
        for row in data.chunks_exact_mut(w) {
            for (v, bv) in row.iter_mut().zip(bt.data()) {
                *v += bv;
            }
        }
        let t = Tensor::from_parts(xs.to_vec(), data);
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddBias(x, b), ng))
    }

    /// Adds `b` broadcast along `axis` of `x`; `b`'s shape is `x`'s with that
    /// axis removed.
    pub fn add_expand(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        let xs = xt.shape();
        if axis >= xs.len() {
            return Err(Error::shape(format!(
                "add_expand: axis {axis} out of range for {xs:?}"
            )));
        }
        let mut expect = xs.to_vec();
        expect.remove(axis);
        if bt.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "add_expand: {:?} cannot broadcast along axis {axis} of {xs:?}",
                bt.shape()
            )));
        }
        let (pre, len, post) = split_axis(xs, axis);
        let mut data = xt.data().to_vec();
        for p in 0..pre {
            let brow = &bt.data()[p * post..(p + 1) * post];
            for i in 0..len {
                let off = (p * len + i) * post;
                for (v, bv) in data[off..off + post].iter_mut().zip(brow) {
                    *v += bv;
                }
            }
        }
        let t = Tensor::from_parts(xs.to_vec(), data);
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddExpand { x, b, axis }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var, spec: Contraction) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (ash, bsh) = (at.shape().to_vec(), bt.shape().to_vec());
        let ng = self.needs(a) || self.needs(b);
        match spec {
            Contraction::Axis(_) | Contraction::Last => {
                let axis = match spec {
                    Contraction::Axis(i) => i,
                    _ => ash.len().checked_sub(1).ok_or_else(|| {
                        Error::shape("matmul: left operand is a scalar".to_string())
                    })?,
                };
                if axis >= ash.len() || bsh.len() != 2 || ash[axis] != bsh[0] {
                    return Err(Error::shape(format!(
                        "matmul: cannot contract axis {axis} of {ash:?} with {bsh:?}"
                    )));
                }
                let (pre, m, post) = split_axis(&ash, axis);
                let layout = AxisLayout {
                    pre,
                    m,
                    post,
                    j: bsh[1],
                };
                let data = kernels::contract_axis(at.data(), bt.data(), layout);
                let mut shape = ash.clone();
                shape[axis] = bsh[1];
                let t = Tensor::from_parts(shape, data);
                Ok(self.push(t, Op::ContractAxis { x: a, w: b, layout }, ng))
            }
            Contraction::Batched { transpose_rhs } => {
                let ok = ash.len() == 3 && bsh.len() == 3 && ash[0] == bsh[0];
                let (k_rhs, n) = if transpose_rhs {
                    (bsh.get(2), bsh.get(1))
                } else {
                    (bsh.get(1), bsh.get(2))
                };
                if !ok || k_rhs != ash.get(2) {
                    return Err(Error::shape(format!(
                        "batched matmul: {ash:?} x {bsh:?} (transpose_rhs = {transpose_rhs})"
                    )));
                }
                let layout = BatchLayout {
                    g: ash[0],
                    m: ash[1],
                    k: ash[2],
                    n: *n.expect("rank checked"),
                    transpose_rhs,
                };
                let data = kernels::batched_matmul(at.data(), bt.data(), layout);
                let t = Tensor::from_parts(vec![layout.g, layout.m, layout.n], data);
                Ok(self.push(t, Op::Batched { a, b, layout }, ng))
            }
        }
    }

    /// Concatenates along `axis`. Either side may have length zero there.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (ash, bsh) = (at.shape(), bt.shape());
        let compatible = ash.len() == bsh.len()
            && axis < ash.len()
            && ash
                .iter()
                .zip(bsh)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape(format!(
                "concat along axis {axis}: {ash:?} vs {bsh:?}"
            )));
        }
        let (pre, na, post) = split_axis(ash, axis);
        let nb = bsh[axis];
        let data = kernels::concat(at.data(), bt.data(), pre, na, nb, post);
        let mut shape = ash.to_vec();
        shape[axis] = na + nb;
        let t = Tensor::from_parts(shape, data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            t,
            Op::Concat {
                a,
                b,
                pre,
                na,
                nb,
                post,
            },
            ng,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| kernels::gelu(v)).collect();
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(t, Op::Gelu(x), ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xt = self.value(x);
        if axis >= xt.rank() {
            return Err(Error::shape(format!(
                "softmax: axis {axis} out of range for {:?}",
                xt.shape()
            )));
        }
        let (pre, len, post) = split_axis(xt.shape(), axis);
        let data = kernels::softmax(xt.data(), pre, len, post);
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        let ng = self.needs(x);
        Ok(self.push(t, Op::Softmax { x, pre, len, post }, ng))
    }

    /// `g * a + (1 - g) * b`, elementwise.
    pub fn gate(&mut self, g: Var, a: Var, b: Var) -> Result<Var> {
        let (gt, at, bt) = (self.value(g), self.value(a), self.value(b));
        same_shape("gate", gt, at)?;
        same_shape("gate", gt, bt)?;
        let data = gt
            .data()
            .iter()
            .zip(at.data())
            .zip(bt.data())
            .map(|((g, a), b)| g * a + (1.0 - g) * b)
            .collect();
        let t = Tensor::from_parts(gt.shape().to_vec(), data);
        let ng = self.needs(g) || self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Gate { g, a, b }, ng))
    }

    /// Block convolution over axis `-3` of `x: [.., t, vars, d_in]` with a
    /// `[block, d_in, d_out]` kernel whose stride equals its length.
    pub fn blocked_conv1d(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(bias));
        let (xs, ws) = (xt.shape(), wt.shape());
        if xs.len() < 3 || ws.len() != 3 || ws[1] != xs[xs.len() - 1] {
            return Err(Error::shape(format!(
                "blocked_conv1d: input {xs:?} with kernel {ws:?}"
            )));
        }
        if bt.shape() != [ws[2]] {
            return Err(Error::shape(format!(
                "blocked_conv1d: bias {:?} for {} output channels",
                bt.shape(),
                ws[2]
            )));
        }
        let r = xs.len();
        let (t, block) = (xs[r - 3], ws[0]);
        if t % block != 0 {
            return Err(Error::shape(format!(
                "blocked_conv1d: length {t} is not divisible by block size {block}"
            )));
        }
        let layout = ConvLayout {
            pre: xs[..r - 3].iter().product(),
            t,
            vars: xs[r - 2],
            d_in: ws[1],
            d_out: ws[2],
            block,
        };
        let data = kernels::block_conv(xt.data(), wt.data(), bt.data(), layout);
        let mut shape = xs.to_vec();
        shape[r - 3] = t / block;
        shape[r - 1] = ws[2];
        let t = Tensor::from_parts(shape, data);
        let ng = self.needs(x) || self.needs(w) || self.needs(bias);
        Ok(self.push(t, Op::Conv { x, w, bias, layout }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let mut seen = vec![false; xt.rank()];
        let valid = perm.len() == xt.rank()
            && perm
                .iter()
                .all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape(format!(
                "permute: {perm:?} is not a permutation of {:?}",
                xt.shape()
            )));
        }
        let data = kernels::permute(xt.data(), xt.shape(), perm);
        let shape = perm.iter().map(|&p| xt.shape()[p]).collect();
        let t = Tensor::from_parts(shape, data);
        let ng = self.needs(x);
        Ok(self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            ng,
        ))
    }

    /// Scales every vector along the last axis to unit L2 norm; zero vectors
    /// map to zero.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let width = *xt
            .shape()
            .last()
            .ok_or_else(|| Error::shape("l2_normalize on a scalar".to_string()))?;
        let (data, norms) = kernels::l2_normalize_rows(xt.data(), width);
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        let ng = self.needs(x);
        Ok(self.push(t, Op::L2Normalize { x, norms }, ng))
    }

    /// `out[.., n, :] = x[.., n] * w[n, :]` for `x: [.., vars]`, `w: [vars, dim]`.
    pub fn embed_values(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (xs, ws) = (xt.shape(), wt.shape());
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(Error::shape(format!(
                "embed_values: values {xs:?} with weights {ws:?}"
            )));
        }
        let (vars, dim) = (ws[0], ws[1]);
        let rows = xt.len() / vars;
        let mut data = Vec::with_capacity(xt.len() * dim);
        for row in xt.data().chunks_exact(vars) {
            for (n, &v) in row.iter().enumerate() {
                data.extend(wt.data()[n * dim..(n + 1) * dim].iter().map(|w| v * w));
            }
        }
        let mut shape = xs.to_vec();
        shape.push(dim);
        let t = Tensor::from_parts(shape, data);
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(
            t,
            Op::EmbedValues {
                x,
                w,
                rows,
                vars,
                dim,
            },
            ng,
        ))
    }

    /// Mean squared difference, as a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape("mse_loss", p, t)?;
        let n = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(s / n), Op::MseLoss { pred, target }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Backpropagates from a one-element node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Autograd(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Autograd(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, g: Vec<f64>) {
        if !self.needs(to) {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Variable | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    self.send(grads, *a, g.iter().zip(y).map(|(g, y)| g * y).collect());
                }
                if self.needs(*b) {
                    self.send(grads, *b, g.iter().zip(x).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, c) => self.send(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::AddBias(x, b) => {
                self.send(grads, *x, g.to_vec());
                if self.needs(*b) {
                    let w = self.value(*b).len();
                    self.send(grads, *b, kernels::sum_rows(g, w));
                }
            }
            Op::AddExpand { x, b, axis } => {
                self.send(grads, *x, g.to_vec());
                if self.needs(*b) {
                    let (pre, len, post) = split_axis(self.shape(*x), *axis);
                    let mut db = vec![0.0; pre * post];
                    for p in 0..pre {
                        let acc = &mut db[p * post..(p + 1) * post];
                        for k in 0..len {
                            let off = (p * len + k) * post;
                            for (a, v) in acc.iter_mut().zip(&g[off..off + post]) {
                                *a += v;
                            }
                        }
                    }
                    self.send(grads, *b, db);
                }
            }
            Op::ContractAxis { x, w, layout } => {
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    self.send(grads, *x, kernels::contract_axis_grad_x(g, wv, *layout));
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    self.send(grads, *w, kernels::contract_axis_grad_w(xv, g, *layout));
                }
            }
            Op::Batched { a, b, layout } => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    self.send(grads, *a, kernels::batched_matmul_grad_a(g, bv, *layout));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    self.send(grads, *b, kernels::batched_matmul_grad_b(av, g, *layout));
                }
            }
            Op::Concat {
                a,
                b,
                pre,
                na,
                nb,
                post,
            } => {
                let (da, db) = kernels::split(g, *pre, *na, *nb, *post);
                self.send(grads, *a, da);
                self.send(grads, *b, db);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let dx = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.send(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xv)
                    .map(|(g, &x)| g * kernels::gelu_grad(x))
                    .collect();
                self.send(grads, *x, dx);
            }
            Op::Softmax { x, pre, len, post } => {
                let dx = kernels::softmax_grad(node.value.data(), g, *pre, *len, *post);
                self.send(grads, *x, dx);
            }
            Op::Gate { g: gv, a, b } => {
                let gate = self.value(*gv).data();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*gv) {
                    let d = (0..g.len()).map(|k| g[k] * (av[k] - bv[k])).collect();
                    self.send(grads, *gv, d);
                }
                if self.needs(*a) {
                    let d = g.iter().zip(gate).map(|(g, s)| g * s).collect();
                    self.send(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g.iter().zip(gate).map(|(g, s)| g * (1.0 - s)).collect();
                    self.send(grads, *b, d);
                }
            }
            Op::Conv { x, w, bias, layout } => {
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    self.send(grads, *x, kernels::block_conv_grad_x(g, wv, *layout));
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    self.send(grads, *w, kernels::block_conv_grad_w(xv, g, *layout));
                }
                if self.needs(*bias) {
                    self.send(grads, *bias, kernels::sum_rows(g, layout.d_out));
                }
            }
            Op::Reshape(x) => self.send(grads, *x, g.to_vec()),
            Op::Permute { x, perm } => {
                let inv = kernels::invert_perm(perm);
                let dx = kernels::permute(g, node.value.shape(), &inv);
                self.send(grads, *x, dx);
            }
            Op::L2Normalize { x, norms } => {
                let width = *node.value.shape().last().expect("rank >= 1");
                let dx = kernels::l2_normalize_rows_grad(node.value.data(), norms, g, width);
                self.send(grads, *x, dx);
            }
            Op::EmbedValues {
                x,
                w,
                rows,
                vars,
                dim,
            } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if self.needs(*x) {
                    let dx = (0..rows * vars)
                        .map(|r| {
                            let n = r % vars;
                            let gr = &g[r * dim..(r + 1) * dim];
                            gr.iter().zip(&wv[n * dim..(n + 1) * dim]).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    self.send(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; vars * dim];
                    for r in 0..rows * vars {
                        let n = r % vars;
                        let gr = &g[r * dim..(r + 1) * dim];
                        for (a, gv) in dw[n * dim..(n + 1) * dim].iter_mut().zip(gr) {
                            *a += xv[r] * gv;
                        }
                    }
                    self.send(grads, *w, dw);
                }
            }
            Op::MseLoss { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let c = 2.0 * g[0] / p.len() as f64;
                if self.needs(*pred) {
                    self.send(grads, *pred, p.iter().zip(t).map(|(a, b)| c * (a - b)).collect());
                }
                if self.needs(*target) {
                    self.send(grads, *target, p.iter().zip(t).map(|(a, b)| c * (b - a)).collect());
                }
            }
            Op::Sum(x) => {
                let n = numel(self.shape(*x));
                self.send(grads, *x, vec![g[0]; n]);
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`; `None` when no
    /// gradient reached it (stop-gradient leaves, unused branches).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Graph::grad`] but materializes zeros.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(v).len()])
    }

    /// Adds the gradients of every parameter leaf into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        if !self.consumed {
            return Err(Error::Autograd("no backward pass has run".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = match self.grads[i].as_deref() {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; node.value.len()],
                };
                store.get_mut(id).tensor.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }
}
