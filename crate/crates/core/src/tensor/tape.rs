// SPDX-License-Identifier: MIT OR Apache-2.0

//! Recording tape with reverse-mode (`backward`) and forward-mode (`jvp`)
//! sweeps.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order: `backward` walks it once from the output down,
//! `jvp` walks it once from the leaves up.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{add_into, matmul_nn, matmul_nt, matmul_tn, transpose};
use super::{axis_split, gelu, gelu_derivative, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    /// `rhs` is broadcast over the leading dimensions of `lhs`.
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    IndexSelect {
        x: usize,
        axis: usize,
        indices: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Sum(usize),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
    /// True when some leaf upstream requires a gradient.
    tracks_grad: bool,
    grad: Option<Tensor>,
}

/// Single-evaluation record of tensor operations.
///
/// A tape may borrow its leaf tensors (model weights) for its lifetime
/// `'a`, so recording a forward pass never copies parameters. Tapes are not
/// meant to be shared between concurrent evaluations; build one per
/// evaluation.
#[derive(Debug)]
pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

/// Forward-mode tangents for every node of a tape, produced by [`Tape::jvp`].
#[derive(Debug)]
pub struct Tangents {
    tape: u64,
    values: Vec<Option<Vec<f64>>>,
}

impl Tangents {
    /// Tangent of `var`, or `None` when no seeded leaf reaches it (zero).
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        if var.tape != self.tape {
            return None;
        }
        self.values.get(var.index)?.as_deref()
    }

    /// Tangent of a one-element node, zero when unreached.
    pub fn scalar(&self, var: Var) -> f64 {
        self.get(var).map_or(0.0, |t| t[0])
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(var.index)
    }

    fn value_at(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let tracks_grad = inputs.iter().any(|&i| self.nodes[i].tracks_grad);
        let index = self.nodes.len();
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad: false,
            tracks_grad,
            grad: None,
        });
        Var { tape: self.id, index }
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            tracks_grad: requires_grad,
            grad: None,
        });
        Var { tape: self.id, index }
    }

    /// Records an owned leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Owned(value), requires_grad)
    }

    /// Records a leaf borrowed for the lifetime of the tape.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Borrowed(value), requires_grad)
    }

    /// Records a borrowed leaf that never receives a gradient.
    pub fn constant(&mut self, value: &'a Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(value), false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        let i = self.check(var)?;
        Ok(self.value_at(i))
    }

    /// Gradient recorded by the last [`Tape::backward`] for a leaf created
    /// with `requires_grad`.
    pub fn grad(&self, var: Var) -> Result<Option<&Tensor>> {
        let i = self.check(var)?;
        Ok(self.nodes[i].grad.as_ref())
    }

    // ------------------------------------------------------------------
    // primitive ops
    // ------------------------------------------------------------------

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.value_at(ia).dims2()?;
        let (k2, n) = self.value_at(ib).dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m}, {k}] x [{k2}, {n}]: inner dimensions differ"),
            ));
        }
        let data = matmul_nn(self.value_at(ia).data(), self.value_at(ib).data(), m, k, n);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], data),
            Op::MatMul(ia, ib),
            &[ia, ib],
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (r, c) = self.value_at(ia).dims2()?;
        let data = transpose(self.value_at(ia).data(), r, c);
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(ia), &[ia]))
    }

    /// `a + b`, where `b`'s shape must equal `a`'s or a trailing suffix of
    /// it (a bias row broadcast over tokens, for instance).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.value_at(ia).shape(), self.value_at(ib).shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(
                "add",
                format!("cannot broadcast {sb:?} onto {sa:?}"),
            ));
        }
        let rhs = self.value_at(ib).data();
        let mut data = self.value_at(ia).data().to_vec();
        for chunk in data.chunks_mut(rhs.len().max(1)) {
            add_into(chunk, rhs);
        }
        let shape = sa.to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(ia, ib), &[ia, ib]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.value_at(ia), self.value_at(ib));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(ia, ib), &[ia, ib]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.value_at(ia);
        let data = t.data().iter().map(|x| x * factor).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Scale(ia, factor), &[ia]))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter {
                name: "eps",
                detail: format!("layer_norm epsilon must be > 0, got {eps}"),
            });
        }
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let tx = self.value_at(ix);
        let width = *tx.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        for (name, i) in [("gamma", ig), ("beta", ib)] {
            if self.value_at(i).shape() != [width] {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} has shape {:?}, expected [{width}]", self.value_at(i).shape()),
                ));
            }
        }
        let (g, b) = (self.value_at(ig).data(), self.value_at(ib).data());
        let rows = tx.numel() / width.max(1);
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..width {
                let h = (row[j] - mean) * is;
                xhat[r * width + j] = h;
                out[r * width + j] = h * g[j] + b[j];
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
            },
            &[ix, ig, ib],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.value_at(ix);
        let data = t.data().iter().map(|&v| gelu(v)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Gelu(ix), &[ix]))
    }

    fn check_axis(&self, op: &'static str, i: usize, axis: usize) -> Result<()> {
        let rank = self.value_at(i).rank();
        if axis >= rank {
            return Err(Error::shape(op, format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    /// Softmax along `axis`, max-shifted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.check(x)?;
        self.check_axis("softmax", ix, axis)?;
        let t = self.value_at(ix);
        let data = softmax_lanes(t.data(), t.shape(), axis, false);
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(ix, axis), &[ix]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.check(x)?;
        self.check_axis("log_softmax", ix, axis)?;
        let t = self.value_at(ix);
        let data = softmax_lanes(t.data(), t.shape(), axis, true);
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::LogSoftmax(ix, axis), &[ix]))
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        self.check_axis("index_select", ix, axis)?;
        let t = self.value_at(ix);
        let (outer, len, inner) = axis_split(t.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::shape(
                "index_select",
                format!("index {bad} out of range for axis of length {len}"),
            ));
        }
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * len + i) * inner;
                data.extend_from_slice(&t.data()[start..start + inner]);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = indices.len();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::IndexSelect {
                x: ix,
                axis,
                indices: indices.to_vec(),
            },
            &[ix],
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = xs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = *idx
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.value_at(first).shape().to_vec();
        for &i in &idx {
            let s = self.value_at(i).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = idx.iter().map(|&i| self.value_at(i).shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let t = self.value_at(i);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: idx.clone(),
                axis,
            },
            &idx,
        ))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.value_at(ix).data().iter().sum::<f64>();
        Ok(self.push(Tensor::scalar(s), Op::Sum(ix), &[ix]))
    }

    // ------------------------------------------------------------------
    // reverse mode
    // ------------------------------------------------------------------

    /// Back-propagates from a one-element `output`, storing gradients on
    /// every leaf recorded with `requires_grad` (zero when the leaf does
    /// not influence the output). Gradients of a previous call are
    /// replaced.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out = self.check(output)?;
        if self.nodes[out].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[out].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(vec![1.0]);
        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracks_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        let shape_of = |n: &Node| n.value.shape().to_vec();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad {
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.grad = Some(Tensor::from_parts(shape_of(node), data));
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, contribution: Vec<f64>) {
        if !self.nodes[target].tracks_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => add_into(existing, &contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].tracks_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value_at(*a), self.value_at(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.wants(*a) {
                    let ga = matmul_nt(g, tb.data(), m, n, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = matmul_tn(ta.data(), g, m, k, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value_at(*a).shape()[0], self.value_at(*a).shape()[1]);
                self.accumulate(grads, *a, transpose(g, c, r));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    let width = self.value_at(*b).numel();
                    let mut gb = vec![0.0; width];
                    for chunk in g.chunks(width.max(1)) {
                        add_into(&mut gb, chunk);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value_at(*a), self.value_at(*b));
                if self.wants(*a) {
                    let ga = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, g.iter().map(|x| x * factor).collect());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value_at(*gamma).data();
                let width = gam.len();
                let rows = inv_std.len();
                if self.wants(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let span = r * width..(r + 1) * width;
                        let (gr, hr) = (&g[span.clone()], &xhat[span.clone()]);
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..width {
                            let d = gr[j] * gam[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= width as f64;
                        mean_dh /= width as f64;
                        for j in 0..width {
                            let d = gr[j] * gam[j];
                            gx[r * width + j] = inv_std[r] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*gamma) {
                    let mut gg = vec![0.0; width];
                    for r in 0..rows {
                        for j in 0..width {
                            gg[j] += g[r * width + j] * xhat[r * width + j];
                        }
                    }
                    self.accumulate(grads, *gamma, gg);
                }
                if self.wants(*beta) {
                    let mut gb = vec![0.0; width];
                    for chunk in g.chunks(width) {
                        add_into(&mut gb, chunk);
                    }
                    self.accumulate(grads, *beta, gb);
                }
            }
            Op::Gelu(x) => {
                let tx = self.value_at(*x);
                let gx = g
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, &xv)| gv * gelu_derivative(xv))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let shape = node.value.shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + j;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmax(x, axis) => {
                let y = node.value.data();
                let shape = node.value.shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + j;
                        let total: f64 = (0..len).map(|k| g[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = g[at(k)] - y[at(k)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::IndexSelect { x, axis, indices } => {
                let tx = self.value_at(*x);
                let (outer, len, inner) = axis_split(tx.shape(), *axis);
                let mut gx = vec![0.0; tx.numel()];
                let picked = indices.len();
                for o in 0..outer {
                    for (slot, &src) in indices.iter().enumerate() {
                        let from = (o * picked + slot) * inner;
                        let to = (o * len + src) * inner;
                        add_into(&mut gx[to..to + inner], &g[from..from + inner]);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for &input in inputs {
                    let width = self.value_at(input).shape()[*axis];
                    if self.wants(input) {
                        let mut gi = Vec::with_capacity(outer * width * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[start..start + width * inner]);
                        }
                        self.accumulate(grads, input, gi);
                    }
                    offset += width;
                }
            }
            Op::Sum(x) => {
                let n = self.value_at(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
        }
    }

    // ------------------------------------------------------------------
    // forward mode
    // ------------------------------------------------------------------

    /// Propagates tangents seeded on leaves through the whole tape.
    ///
    /// Unseeded leaves have zero tangent. The result holds the directional
    /// derivative of every node along the seeded direction.
    pub fn jvp(&self, seeds: &[(Var, &[f64])]) -> Result<Tangents> {
        let mut values: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for &(var, tangent) in seeds {
            let i = self.check(var)?;
            if !matches!(self.nodes[i].op, Op::Leaf) {
                return Err(Error::Usage("jvp seeds must be leaves".into()));
            }
            if tangent.len() != self.nodes[i].value.numel() {
                return Err(Error::shape(
                    "jvp",
                    format!(
                        "seed of length {} for leaf with {} elements",
                        tangent.len(),
                        self.nodes[i].value.numel()
                    ),
                ));
            }
            values[i] = Some(tangent.to_vec());
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            values[i] = self.tangent_of(i, &values);
        }
        Ok(Tangents { tape: self.id, values })
    }

    fn tangent_of(&self, i: usize, t: &[Option<Vec<f64>>]) -> Option<Vec<f64>> {
        let node = &self.nodes[i];
        let out_len = node.value.numel();
        match &node.op {
            Op::Leaf => None,
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value_at(*a), self.value_at(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                match (&t[*a], &t[*b]) {
                    (None, None) => None,
                    (da, db) => {
                        let mut out = match da {
                            Some(da) => matmul_nn(da, tb.data(), m, k, n),
                            None => vec![0.0; out_len],
                        };
                        if let Some(db) = db {
                            add_into(&mut out, &matmul_nn(ta.data(), db, m, k, n));
                        }
                        Some(out)
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value_at(*a).shape()[0], self.value_at(*a).shape()[1]);
                t[*a].as_ref().map(|d| transpose(d, r, c))
            }
            Op::Add(a, b) => match (&t[*a], &t[*b]) {
                (None, None) => None,
                (da, db) => {
                    let mut out = da.clone().unwrap_or_else(|| vec![0.0; out_len]);
                    if let Some(db) = db {
                        for chunk in out.chunks_mut(db.len().max(1)) {
                            add_into(chunk, db);
                        }
                    }
                    Some(out)
                }
            },
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value_at(*a), self.value_at(*b));
                match (&t[*a], &t[*b]) {
                    (None, None) => None,
                    (da, db) => {
                        let mut out = vec![0.0; out_len];
                        if let Some(da) = da {
                            for ((o, d), y) in out.iter_mut().zip(da).zip(tb.data()) {
                                *o += d * y;
                            }
                        }
                        if let Some(db) = db {
                            for ((o, d), x) in out.iter_mut().zip(db).zip(ta.data()) {
                                *o += x * d;
                            }
                        }
                        Some(out)
                    }
                }
            }
            Op::Scale(a, factor) => t[*a].as_ref().map(|d| d.iter().map(|v| v * factor).collect()),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if t[*x].is_none() && t[*gamma].is_none() && t[*beta].is_none() {
                    return None;
                }
                let gam = self.value_at(*gamma).data();
                let width = gam.len();
                let mut out = vec![0.0; out_len];
                if let Some(dx) = &t[*x] {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let span = r * width..(r + 1) * width;
                        let (dr, hr) = (&dx[span.clone()], &xhat[span]);
                        let mean_d = dr.iter().sum::<f64>() / width as f64;
                        let mean_dh =
                            dr.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / width as f64;
                        for j in 0..width {
                            let dh = is * (dr[j] - mean_d - hr[j] * mean_dh);
                            out[r * width + j] = gam[j] * dh;
                        }
                    }
                }
                if let Some(dg) = &t[*gamma] {
                    for (idx, o) in out.iter_mut().enumerate() {
                        *o += dg[idx % width] * xhat[idx];
                    }
                }
                if let Some(db) = &t[*beta] {
                    for chunk in out.chunks_mut(width) {
                        add_into(chunk, db);
                    }
                }
                Some(out)
            }
            Op::Gelu(x) => t[*x].as_ref().map(|d| {
                d.iter()
                    .zip(self.value_at(*x).data())
                    .map(|(dv, &xv)| dv * gelu_derivative(xv))
                    .collect()
            }),
            Op::Softmax(x, axis) => t[*x].as_ref().map(|d| {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut out = vec![0.0; out_len];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + j;
                        let dot: f64 = (0..len).map(|k| y[at(k)] * d[at(k)]).sum();
                        for k in 0..len {
                            out[at(k)] = y[at(k)] * (d[at(k)] - dot);
                        }
                    }
                }
                out
            }),
            Op::LogSoftmax(x, axis) => t[*x].as_ref().map(|d| {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut out = vec![0.0; out_len];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + j;
                        let dot: f64 = (0..len).map(|k| y[at(k)].exp() * d[at(k)]).sum();
                        for k in 0..len {
                            out[at(k)] = d[at(k)] - dot;
                        }
                    }
                }
                out
            }),
            Op::IndexSelect { x, axis, indices } => t[*x].as_ref().map(|d| {
                let (outer, len, inner) = axis_split(self.value_at(*x).shape(), *axis);
                let mut out = Vec::with_capacity(out_len);
                for o in 0..outer {
                    for &src in indices {
                        let start = (o * len + src) * inner;
                        out.extend_from_slice(&d[start..start + inner]);
                    }
                }
                out
            }),
            Op::Concat { inputs, axis } => {
                if inputs.iter().all(|&i| t[i].is_none()) {
                    return None;
                }
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut out = Vec::with_capacity(out_len);
                for o in 0..outer {
                    for &input in inputs {
                        let chunk = self.value_at(input).shape()[*axis] * inner;
                        match &t[input] {
                            Some(d) => out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]),
                            None => out.extend(std::iter::repeat_n(0.0, chunk)),
                        }
                    }
                }
                Some(out)
            }
            Op::Sum(x) => t[*x].as_ref().map(|d| vec![d.iter().sum::<f64>()]),
        }
    }
}

fn softmax_lanes(data: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |k: usize| (o * len + k) * inner + j;
            let max = (0..len).map(|k| data[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (data[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            if log {
                let log_total = total.ln();
                for k in 0..len {
                    out[at(k)] = data[at(k)] - max - log_total;
                }
            } else {
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
    }
    out
}
