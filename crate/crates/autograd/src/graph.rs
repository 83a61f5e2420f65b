//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as a node appended to a flat arena.
//! Because a node can only reference nodes created before it, arena order is
//! already a topological order and the backward pass is a single reverse
//! sweep. Leaves are either parameters (gradients tracked) or constants.

use crate::error::{AutogradError, Result};
use crate::tensor::{split_axis, Tensor};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add { a: NodeId, b: NodeId, broadcast: bool },
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum { a: NodeId, axis: Option<usize> },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize },
    Reshape(NodeId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId, dilation: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    L2Normalize { a: NodeId, norms: Vec<f64> },
    MaskedLogSumExp { a: NodeId, mask: Vec<bool>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for a single forward pass.
///
/// One graph is meant to be built, differentiated once, and dropped. It is not
/// `Sync`-shared; independent graphs can live on independent threads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when the node received none.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
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

    /// Trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutogradError::UnknownNode(id.0))
        }
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── forward ops ──────────────────────────────────────────────────────

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum. `b` may also be a vector matching the last axis of `a`,
    /// in which case it is added to every row.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.ndim() == 1 && av.ndim() >= 1 && bv.len() == av.last_dim() {
            true
        } else {
            return Err(AutogradError::ShapeMismatch {
                op: "add",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        let mut out = av.clone();
        if broadcast {
            let c = bv.len();
            for row in out.data_mut().chunks_mut(c.max(1)) {
                for (o, &x) in row.iter_mut().zip(bv.data()) {
                    *o += x;
                }
            }
        } else {
            for (o, &x) in out.data_mut().iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b, broadcast }, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutogradError::ShapeMismatch {
                op: name,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Scale(a, factor), rg))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Relu(a), rg))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Exp(a), rg))
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let av = self.value(a);
        if let Some((index, &value)) = av.data().iter().enumerate().find(|(_, &v)| v <= 0.0 || v.is_nan()) {
            return Err(AutogradError::Domain { op: "log", index, value });
        }
        let value = av.map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Log(a), rg))
    }

    /// Sum over `axis` (removing it), or over everything when `axis` is `None`.
    pub fn sum(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.check(a)?;
        let av = self.value(a);
        let value = match axis {
            None => Tensor::scalar(av.sum()),
            Some(ax) => {
                if ax >= av.ndim() {
                    return Err(AutogradError::InvalidShape {
                        op: "sum",
                        shape: av.shape().to_vec(),
                        reason: format!("axis {ax} out of range"),
                    });
                }
                let (outer, len, inner) = split_axis(av.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let d = av.data();
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += v;
                        }
                    }
                }
                let mut shape = av.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, out)?
            }
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Sum { a, axis }, rg))
    }

    /// Mean over `axis`, or over everything when `axis` is `None`.
    pub fn mean(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.check(a)?;
        let av = self.value(a);
        let n = match axis {
            None => av.len(),
            Some(ax) if ax < av.ndim() => av.shape()[ax],
            Some(_) => 0,
        };
        let s = self.sum(a, axis)?;
        if n == 0 {
            return Err(AutogradError::InvalidShape {
                op: "mean",
                shape: self.value(a).shape().to_vec(),
                reason: "empty reduction".into(),
            });
        }
        self.scale(s, 1.0 / n as f64)
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs.first().ok_or_else(|| {
            AutogradError::InvalidArgument("concat needs at least one input".into())
        })?;
        for &id in inputs {
            self.check(id)?;
        }
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(AutogradError::InvalidShape {
                op: "concat",
                shape: base,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutogradError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id);
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.check(a)?;
        let av = self.value(a);
        if axis >= av.ndim() || start >= end || end > av.shape()[axis] {
            return Err(AutogradError::InvalidShape {
                op: "slice",
                shape: av.shape().to_vec(),
                reason: format!("range {start}..{end} on axis {axis}"),
            });
        }
        let (outer, len, inner) = split_axis(av.shape(), axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&av.data()[base..base + width * inner]);
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = width;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice { a, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Causal dilated 1-D convolution.
    ///
    /// `x: [batch, time, c_in]`, `w: [kernel, c_in, c_out]`, `b: [c_out]`.
    /// The input is left-padded with `(kernel - 1) * dilation` zeros so the
    /// output keeps the input length and `out[t]` only reads `x[..=t]`. Tap
    /// `k` of the kernel reads `x[t - (kernel - 1 - k) * dilation]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, dilation: usize) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ndim() != 3 || wv.ndim() != 3 || wv.shape()[1] != xv.shape()[2] {
            return Err(AutogradError::ShapeMismatch {
                op: "conv1d",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let (kernel, c_in, c_out) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if bv.shape() != [c_out] {
            return Err(AutogradError::ShapeMismatch {
                op: "conv1d bias",
                left: wv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        if dilation == 0 || kernel == 0 {
            return Err(AutogradError::InvalidArgument(
                "conv1d needs kernel >= 1 and dilation >= 1".into(),
            ));
        }
        let (batch, time) = (xv.shape()[0], xv.shape()[1]);
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; batch * time * c_out];
        for bi in 0..batch {
            for t in 0..time {
                let orow = &mut out[(bi * time + t) * c_out..(bi * time + t + 1) * c_out];
                orow.copy_from_slice(bd);
                for k in 0..kernel {
                    let shift = (kernel - 1 - k) * dilation;
                    if shift > t {
                        continue;
                    }
                    let src = (bi * time + t - shift) * c_in;
                    for c in 0..c_in {
                        let xval = xd[src + c];
                        if xval == 0.0 {
                            continue;
                        }
                        let wrow = &wd[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xval * wv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, time, c_out], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Conv1d { x, w, b, dilation }, rg))
    }

    /// Layer normalization over the last axis with elementwise affine
    /// `gain` and `bias` (both shaped `[last_dim]`).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.last_dim();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(AutogradError::ShapeMismatch {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let rows = xv.n_rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Divides every row (last axis) by its Euclidean norm.
    pub fn l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let av = self.value(a);
        let rows = av.n_rows();
        let mut norms = Vec::with_capacity(rows);
        let mut out = av.clone();
        for r in 0..rows {
            let n = av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(AutogradError::ZeroNorm {
                    op: "l2_normalize",
                    row: r,
                });
            }
            norms.push(n);
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::L2Normalize { a, norms }, rg))
    }

    /// Row-wise `log Σ_{j: mask[r][j]} exp(a[r][j])` for `a: [rows, cols]`.
    ///
    /// Evaluated with max-subtraction. Every row must select at least one entry.
    pub fn masked_logsumexp(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        self.check(a)?;
        let av = self.value(a);
        if av.ndim() != 2 || mask.len() != av.len() {
            return Err(AutogradError::ShapeMismatch {
                op: "masked_logsumexp",
                left: av.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let (rows, cols) = (av.shape()[0], av.shape()[1]);
        let mut out = Vec::with_capacity(rows);
        let mut probs = vec![0.0; av.len()];
        for r in 0..rows {
            let row = av.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AutogradError::InvalidArgument(format!(
                    "masked_logsumexp: row {r} selects no entries"
                )));
            }
            let mut total = 0.0;
            for j in 0..cols {
                if m[j] {
                    let e = (row[j] - max).exp();
                    probs[r * cols + j] = e;
                    total += e;
                }
            }
            for p in &mut probs[r * cols..(r + 1) * cols] {
                *p /= total;
            }
            out.push(max + total.ln());
        }
        let value = Tensor::new(vec![rows], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            value,
            Op::MaskedLogSumExp {
                a,
                mask: mask.to_vec(),
                probs,
            },
            rg,
        ))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a single-element output node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.check(output)?;
        let out_val = &self.nodes[output.0].value;
        if out_val.len() != 1 {
            return Err(AutogradError::NotScalar {
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out_val.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.requires_grad(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?)?;
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aval = av.data()[i * k + p];
                            if aval != 0.0 {
                                axpy(aval, grow, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?)?;
                }
            }
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*b) {
                    let gb = if *broadcast {
                        let c = self.value(*b).len();
                        let mut acc = vec![0.0; c];
                        for row in gd.chunks(c.max(1)) {
                            for (s, &v) in acc.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        Tensor::new(vec![c], acc)?
                    } else {
                        g.clone()
                    };
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, zip_map(g, bv, |x, y| x * y)?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, zip_map(g, av, |x, y| x * y)?)?;
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, g.map(|v| v * factor))?;
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, zip_map(g, av, |d, x| if x > 0.0 { d } else { 0.0 })?)?;
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, zip_map(g, &node.value, |d, y| d * y)?)?;
            }
            Op::Log(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, zip_map(g, av, |d, x| d / x)?)?;
            }
            Op::Sum { a, axis } => {
                let av = self.value(*a);
                let ga = match axis {
                    None => Tensor::full(av.shape(), gd[0]),
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(av.shape(), *ax);
                        let mut out = vec![0.0; av.len()];
                        for o in 0..outer {
                            let src = &gd[o * inner..(o + 1) * inner];
                            for l in 0..len {
                                out[(o * len + l) * inner..(o * len + l + 1) * inner]
                                    .copy_from_slice(src);
                            }
                        }
                        Tensor::new(av.shape().to_vec(), out)?
                    }
                };
                self.accumulate(grads, *a, ga)?;
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &id in inputs {
                    let shape = self.value(id).shape().to_vec();
                    let len = shape[*axis];
                    if self.requires_grad(id) {
                        let mut part = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            part.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        self.accumulate(grads, id, Tensor::new(shape, part)?)?;
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let av = self.value(*a);
                let (outer, len, inner) = split_axis(av.shape(), *axis);
                let width = node.value.shape()[*axis];
                let mut out = vec![0.0; av.len()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src = o * width * inner;
                    out[dst..dst + width * inner].copy_from_slice(&gd[src..src + width * inner]);
                }
                self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), out)?)?;
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.reshaped(&shape)?)?;
            }
            Op::Conv1d { x, w, b, dilation } => {
                self.conv1d_backward(*x, *w, *b, *dilation, gd, grads)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.last_dim();
                let rows = node.value.n_rows();
                let gv = self.value(*gain).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; node.value.len()];
                    let mut dxhat = vec![0.0; c];
                    for r in 0..rows {
                        let base = r * c;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = gd[base + j] * gv[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat[base + j];
                        }
                        let scale = inv_std[r] / c as f64;
                        for j in 0..c {
                            dx[base + j] =
                                scale * (c as f64 * dxhat[j] - s1 - xhat[base + j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), dx)?)?;
                }
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for r in 0..rows {
                        for j in 0..c {
                            dg[j] += gd[r * c + j] * xhat[r * c + j];
                            db[j] += gd[r * c + j];
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::new(vec![c], dg)?)?;
                    self.accumulate(grads, *bias, Tensor::new(vec![c], db)?)?;
                }
            }
            Op::L2Normalize { a, norms } => {
                let y = &node.value;
                let c = y.last_dim();
                let mut dx = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = &gd[r * c..(r + 1) * c];
                    let proj = dot(yr, gr);
                    for j in 0..c {
                        dx[r * c + j] = (gr[j] - yr[j] * proj) / n;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), dx)?)?;
            }
            Op::MaskedLogSumExp { a, mask, probs } => {
                let av = self.value(*a);
                let cols = av.shape()[1];
                let mut dx = vec![0.0; av.len()];
                for (i, d) in dx.iter_mut().enumerate() {
                    if mask[i] {
                        *d = gd[i / cols] * probs[i];
                    }
                }
                self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), dx)?)?;
            }
        }
        Ok(())
    }

    fn conv1d_backward(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dilation: usize,
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (batch, time, c_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (kernel, c_out) = (wv.shape()[0], wv.shape()[2]);
        let (xd, wd) = (xv.data(), wv.data());
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        let mut dx = if need_x { vec![0.0; xv.len()] } else { Vec::new() };
        let mut dw = if need_w { vec![0.0; wv.len()] } else { Vec::new() };
        for bi in 0..batch {
            for t in 0..time {
                let grow = &gd[(bi * time + t) * c_out..(bi * time + t + 1) * c_out];
                for k in 0..kernel {
                    let shift = (kernel - 1 - k) * dilation;
                    if shift > t {
                        continue;
                    }
                    let src = (bi * time + t - shift) * c_in;
                    for c in 0..c_in {
                        let woff = (k * c_in + c) * c_out;
                        if need_x {
                            dx[src + c] += dot(&wd[woff..woff + c_out], grow);
                        }
                        if need_w {
                            let xval = xd[src + c];
                            if xval != 0.0 {
                                axpy(xval, grow, &mut dw[woff..woff + c_out]);
                            }
                        }
                    }
                }
            }
        }
        if need_x {
            self.accumulate(grads, x, Tensor::new(xv.shape().to_vec(), dx)?)?;
        }
        if need_w {
            self.accumulate(grads, w, Tensor::new(wv.shape().to_vec(), dw)?)?;
        }
        if self.requires_grad(b) {
            let mut db = vec![0.0; c_out];
            for row in gd.chunks(c_out) {
                for (s, &v) in db.iter_mut().zip(row) {
                    *s += v;
                }
            }
            self.accumulate(grads, b, Tensor::new(vec![c_out], db)?)?;
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Plain `[m, k] x [k, n]` product.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aval = a[i * k + p];
            if aval != 0.0 {
                axpy(aval, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}
