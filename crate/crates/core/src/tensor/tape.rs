//! Wengert-list reverse mode. Every op appends a node holding its forward
//! value; `backward` replays the list in reverse and accumulates gradients
//! into the requires-grad leaves.

use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Up to four `(source cell, weight)` taps per output cell. Unused taps carry
/// weight zero.
pub type Taps = Vec<[(u32, f64); 4]>;

enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    ConvT2 { x: Var, k: Var },
    DepthwisePair { x: Var, k: Var, l: usize },
    AddBias { x: Var, b: Var },
    Relu(Var),
    ChannelSoftmax(Var),
    TwoWaySoftmax(Var),
    Norm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Resample { x: Var, taps: Rc<Taps> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulBroadcast { x: Var, m: Var },
    Affine { x: Var, scale: f64 },
    Concat(Var, Var),
    CellMask { x: Var, mask: Rc<Vec<f64>> },
    Mean(Vec<Var>),
    SumAll(Var),
    Mse { pred: Var, target: Rc<Vec<f64>>, norm: f64 },
    SoftmaxXent { logits: Var, labels: Rc<Vec<u8>> },
    Focal { logits: Var, targets: Rc<Vec<f64>>, alpha: f64, gamma: f64, norm: f64 },
    SmoothL1 { pred: Var, target: Rc<Vec<f64>>, cell_weight: Rc<Vec<f64>>, norm: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics observed by a train-mode normalization.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, op, needs)
    }

    /// A leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn hwc(&self, v: Var) -> Result<(usize, usize, usize)> {
        self.value(v).dims3()
    }

    /// Gradient of a requires-grad leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    // ---- convolutions ----

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (h, w, cin) = self.hwc(x)?;
        let ks = self.shape(k).to_vec();
        let [kh, kw, kcin, cout] = ks[..] else {
            return Err(dim_err!("conv2d kernel must be [k, k, cin, cout], got {ks:?}"));
        };
        if kh != kw || kh == 0 {
            return Err(dim_err!("conv2d kernel must be square and non-empty, got {ks:?}"));
        }
        if kcin != cin {
            return Err(dim_err!("conv2d input has {cin} channels, kernel expects {kcin}"));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(dim_err!("conv2d kernel {kh} larger than padded input {h}x{w}"));
        }
        let geom = ConvGeom { h, w, cin, cout, k: kh, stride, pad };
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), &geom);
        let value = Tensor::new(vec![ho, wo, cout], out)?;
        Ok(self.derived(value, Op::Conv2d { x, k, geom }, &[x, k]))
    }

    /// 2x2 transposed convolution with stride 2.
    pub fn conv_transpose2x2(&mut self, x: Var, k: Var) -> Result<Var> {
        let (h, w, cin) = self.hwc(x)?;
        let ks = self.shape(k).to_vec();
        let [2, 2, kcin, cout] = ks[..] else {
            return Err(dim_err!("transposed conv kernel must be [2, 2, cin, cout], got {ks:?}"));
        };
        if kcin != cin {
            return Err(dim_err!("transposed conv input has {cin} channels, kernel expects {kcin}"));
        }
        let out = kernels::conv_transpose2x2_forward(self.value(x).data(), self.value(k).data(), h, w, cin, cout);
        let value = Tensor::new(vec![2 * h, 2 * w, cout], out)?;
        Ok(self.derived(value, Op::ConvT2 { x, k }, &[x, k]))
    }

    /// Depthwise same-padded convolution followed by pairwise channel merge,
    /// `[H, W, 2C] -> [H, W, C]`.
    pub fn depthwise_pair(&mut self, x: Var, k: Var) -> Result<Var> {
        let (h, w, c2) = self.hwc(x)?;
        if c2 % 2 != 0 {
            return Err(dim_err!("depthwise pair merge needs an even channel count, got {c2}"));
        }
        let ks = self.shape(k).to_vec();
        let [l, l2, kc] = ks[..] else {
            return Err(dim_err!("depthwise kernel must be [l, l, c], got {ks:?}"));
        };
        if l != l2 || l % 2 == 0 {
            return Err(dim_err!("depthwise kernel must be square with odd size, got {ks:?}"));
        }
        if kc != c2 {
            return Err(dim_err!("depthwise kernel has {kc} channels, input has {c2}"));
        }
        let out = kernels::depthwise_pair_forward(self.value(x).data(), self.value(k).data(), h, w, c2, l);
        let value = Tensor::new(vec![h, w, c2 / 2], out)?;
        Ok(self.derived(value, Op::DepthwisePair { x, k, l }, &[x, k]))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, _, c) = self.hwc(x)?;
        if self.shape(b) != [c] {
            return Err(dim_err!("bias shape {:?} does not match {c} channels", self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, bb) in row.iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        Ok(self.derived(out, Op::AddBias { x, b }, &[x, b]))
    }

    // ---- pointwise ----

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.derived(out, Op::Relu(x), &[x])
    }

    pub fn channel_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, _, c) = self.hwc(x)?;
        if c < 2 {
            return Err(dim_err!("channel softmax needs at least 2 channels, got {c}"));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        Ok(self.derived(out, Op::ChannelSoftmax(x), &[x]))
    }

    /// Two-channel softmax returning channel 0's probability as `[H, W, 1]`.
    pub fn two_way_softmax(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.hwc(x)?;
        if c != 2 {
            return Err(dim_err!("two-way softmax needs exactly 2 channels, got {c}"));
        }
        let data = self.value(x).data().chunks_exact(2).map(|z| sigmoid(z[0] - z[1])).collect();
        let value = Tensor::new(vec![h, w, 1], data)?;
        Ok(self.derived(value, Op::TwoWaySoftmax(x), &[x]))
    }

    /// Per-channel normalization over the spatial extent followed by a
    /// learnable scale and shift. Train mode returns the observed statistics
    /// so the caller can fold them into its running estimates.
    pub fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<(Var, Option<NormStats>)> {
        let (h, w, c) = self.hwc(x)?;
        for (name, len) in [
            ("gamma", self.value(gamma).len()),
            ("beta", self.value(beta).len()),
            ("running mean", running_mean.len()),
            ("running var", running_var.len()),
        ] {
            if len != c {
                return Err(dim_err!("norm {name} has {len} entries, input has {c} channels"));
            }
        }
        let n = (h * w) as f64;
        let xs = self.value(x).data();
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; c];
                for row in xs.chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; c];
                for row in xs.chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);
                (mean, var)
            }
            NormMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for ((xr, hr), or) in xs.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(out.chunks_exact_mut(c)) {
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                or[ch] = g[ch] * hr[ch] + b[ch];
            }
        }
        let value = Tensor::new(vec![h, w, c], out)?;
        let train = mode == NormMode::Train;
        let v = self.derived(value, Op::Norm { x, gamma, beta, xhat, inv_std, train }, &[x, gamma, beta]);
        Ok((v, train.then_some(NormStats { mean, var })))
    }

    /// Gathers each output cell from weighted source cells, for all channels.
    pub fn resample(&mut self, x: Var, taps: Rc<Taps>, out_hw: (usize, usize)) -> Result<Var> {
        let (_, _, c) = self.hwc(x)?;
        if taps.len() != out_hw.0 * out_hw.1 {
            return Err(dim_err!("resample has {} taps for {}x{} output", taps.len(), out_hw.0, out_hw.1));
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; taps.len() * c];
        for (orow, cell) in out.chunks_exact_mut(c).zip(taps.iter()) {
            for &(src, wgt) in cell {
                if wgt != 0.0 {
                    axpy(orow, wgt, &xs[src as usize * c..][..c]);
                }
            }
        }
        let value = Tensor::new(vec![out_hw.0, out_hw.1, c], out)?;
        Ok(self.derived(value, Op::Resample { x, taps }, &[x]))
    }

    // ---- elementwise ----

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = f(*o, *v);
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.derived(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    /// `[H, W, C] * [H, W, 1]`, broadcasting the mask over channels.
    pub fn mul_broadcast(&mut self, x: Var, m: Var) -> Result<Var> {
        let (h, w, c) = self.hwc(x)?;
        if self.shape(m) != [h, w, 1] {
            return Err(dim_err!("mask shape {:?} does not broadcast over [{h}, {w}, {c}]", self.shape(m)));
        }
        let ms = self.value(m).data().to_vec();
        let mut out = self.value(x).clone();
        for (row, mv) in out.data_mut().chunks_exact_mut(c).zip(ms) {
            row.iter_mut().for_each(|v| *v *= mv);
        }
        Ok(self.derived(out, Op::MulBroadcast { x, m }, &[x, m]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = scale * *v + shift);
        self.derived(out, Op::Affine { x, scale }, &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (h, w, ca) = self.hwc(a)?;
        let (hb, wb, cb) = self.hwc(b)?;
        if (h, w) != (hb, wb) {
            return Err(dim_err!("concat extents {h}x{w} and {hb}x{wb} differ"));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(h * w * (ca + cb));
        for (ra, rb) in da.chunks_exact(ca).zip(db.chunks_exact(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let value = Tensor::new(vec![h, w, ca + cb], out)?;
        Ok(self.derived(value, Op::Concat(a, b), &[a, b]))
    }

    /// Multiplies every channel of each cell by a constant per-cell factor.
    pub fn cell_mask(&mut self, x: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let (h, w, c) = self.hwc(x)?;
        if mask.len() != h * w {
            return Err(dim_err!("cell mask has {} entries for {h}x{w}", mask.len()));
        }
        let mut out = self.value(x).clone();
        for (row, mv) in out.data_mut().chunks_exact_mut(c).zip(mask.iter()) {
            row.iter_mut().for_each(|v| *v *= mv);
        }
        Ok(self.derived(out, Op::CellMask { x, mask }, &[x]))
    }

    /// Elementwise mean, summed left to right in the given order.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Contract("mean of an empty list".into()));
        };
        for &v in &xs[1..] {
            self.same_shape(first, v, "mean")?;
        }
        let mut out = self.value(first).clone();
        for &v in &xs[1..] {
            for (o, x) in out.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += x;
            }
        }
        let n = xs.len() as f64;
        out.data_mut().iter_mut().for_each(|o| *o /= n);
        Ok(self.derived(out, Op::Mean(xs.to_vec()), xs))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    // ---- losses ----

    /// `sum((pred - target)^2) / norm`.
    pub fn mse(&mut self, pred: Var, target: Rc<Vec<f64>>, norm: f64) -> Result<Var> {
        if self.value(pred).len() != target.len() {
            return Err(dim_err!("mse target has {} entries, prediction {}", target.len(), self.value(pred).len()));
        }
        let s: f64 = self.value(pred).data().iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
        Ok(self.derived(Tensor::scalar(s / norm), Op::Mse { pred, target, norm }, &[pred]))
    }

    /// Cross-entropy of per-cell class logits `[H, W, K]`, averaged over cells.
    pub fn softmax_xent(&mut self, logits: Var, labels: Rc<Vec<u8>>) -> Result<Var> {
        let (h, w, k) = self.hwc(logits)?;
        if labels.len() != h * w {
            return Err(dim_err!("{} labels for {h}x{w} logits", labels.len()));
        }
        let mut total = 0.0;
        for (row, &lab) in self.value(logits).data().chunks_exact(k).zip(labels.iter()) {
            if lab as usize >= k {
                return Err(Error::Contract(format!("label {lab} out of range for {k} classes")));
            }
            total += log_sum_exp(row) - row[lab as usize];
        }
        let loss = total / (h * w) as f64;
        Ok(self.derived(Tensor::scalar(loss), Op::SoftmaxXent { logits, labels }, &[logits]))
    }

    /// Sigmoid focal loss over single-logit cells, divided by `norm`.
    pub fn focal(&mut self, logits: Var, targets: Rc<Vec<f64>>, alpha: f64, gamma: f64, norm: f64) -> Result<Var> {
        if self.value(logits).len() != targets.len() {
            return Err(dim_err!("{} focal targets for {} logits", targets.len(), self.value(logits).len()));
        }
        let s: f64 = self
            .value(logits)
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| focal_term(z, t, alpha, gamma).0)
            .sum();
        let op = Op::Focal { logits, targets, alpha, gamma, norm };
        Ok(self.derived(Tensor::scalar(s / norm), op, &[logits]))
    }

    /// Smooth-L1 (beta = 1) over `[H, W, C]` regressions, each cell weighted
    /// by `cell_weight`, divided by `norm`.
    pub fn smooth_l1(&mut self, pred: Var, target: Rc<Vec<f64>>, cell_weight: Rc<Vec<f64>>, norm: f64) -> Result<Var> {
        let (h, w, c) = self.hwc(pred)?;
        if target.len() != h * w * c || cell_weight.len() != h * w {
            return Err(dim_err!("smooth-l1 target/weight sizes do not match [{h}, {w}, {c}]"));
        }
        let mut s = 0.0;
        for (i, (p, t)) in self.value(pred).data().iter().zip(target.iter()).enumerate() {
            let wgt = cell_weight[i / c];
            if wgt != 0.0 {
                s += wgt * smooth_l1(p - t).0;
            }
        }
        let op = Op::SmoothL1 { pred, target, cell_weight, norm };
        Ok(self.derived(Tensor::scalar(s / norm), op, &[pred]))
    }

    // ---- reverse pass ----

    /// Accumulates d(loss)/d(leaf) into every requires-grad leaf. Leaves the
    /// loss does not depend on receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                for (s, v) in slot.iter_mut().zip(&g) {
                    *s += v;
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (node, slot) in self.nodes.iter().zip(self.leaf_grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) && node.needs_grad && slot.is_none() {
                *slot = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot => *slot = Some(contrib),
            }
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, k, geom } => {
                let (gx, gk) = kernels::conv2d_backward(val(*x), val(*k), g, geom);
                acc(*x, gx);
                acc(*k, gk);
            }
            Op::ConvT2 { x, k } => {
                let s = nodes[x.0].value.shape();
                let cout = nodes[k.0].value.shape()[3];
                let (gx, gk) = kernels::conv_transpose2x2_backward(val(*x), val(*k), g, s[0], s[1], s[2], cout);
                acc(*x, gx);
                acc(*k, gk);
            }
            Op::DepthwisePair { x, k, l } => {
                let s = nodes[x.0].value.shape();
                let (gx, gk) = kernels::depthwise_pair_backward(val(*x), val(*k), g, s[0], s[1], s[2], *l);
                acc(*x, gx);
                acc(*k, gk);
            }
            Op::AddBias { x, b } => {
                let c = nodes[b.0].value.len();
                let mut gb = vec![0.0; c];
                for row in g.chunks_exact(c) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                acc(*x, g.to_vec());
                acc(*b, gb);
            }
            Op::Relu(x) => {
                let gx = g.iter().zip(val(*x)).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
                acc(*x, gx);
            }
            Op::ChannelSoftmax(x) => {
                let c = nodes[x.0].value.shape()[2];
                let mut gx = vec![0.0; g.len()];
                for ((gr, sr), dr) in g.chunks_exact(c).zip(out.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                    let inner: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                    for ch in 0..c {
                        dr[ch] = sr[ch] * (gr[ch] - inner);
                    }
                }
                acc(*x, gx);
            }
            Op::TwoWaySoftmax(x) => {
                let mut gx = vec![0.0; 2 * g.len()];
                for ((gv, p), d) in g.iter().zip(out).zip(gx.chunks_exact_mut(2)) {
                    let t = gv * p * (1.0 - p);
                    d[0] = t;
                    d[1] = -t;
                }
                acc(*x, gx);
            }
            Op::Norm { x, gamma, beta, xhat, inv_std, train } => {
                let c = inv_std.len();
                let n = (xhat.len() / c) as f64;
                let gm = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] += gr[ch] * hr[ch];
                        dbeta[ch] += gr[ch];
                    }
                }
                let mut gx = vec![0.0; g.len()];
                if *train {
                    // dxhat = g * gamma; sums over the spatial extent are
                    // dbeta * gamma and dgamma * gamma.
                    for ((gr, hr), dr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                        for ch in 0..c {
                            let dxh = gr[ch] * gm[ch];
                            dr[ch] = inv_std[ch] / n
                                * (n * dxh - dbeta[ch] * gm[ch] - hr[ch] * dgamma[ch] * gm[ch]);
                        }
                    }
                } else {
                    for (gr, dr) in g.chunks_exact(c).zip(gx.chunks_exact_mut(c)) {
                        for ch in 0..c {
                            dr[ch] = gr[ch] * gm[ch] * inv_std[ch];
                        }
                    }
                }
                acc(*x, gx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Resample { x, taps } => {
                let c = nodes[x.0].value.shape()[2];
                let mut gx = vec![0.0; nodes[x.0].value.len()];
                for (grow, cell) in g.chunks_exact(c).zip(taps.iter()) {
                    for &(src, wgt) in cell {
                        if wgt != 0.0 {
                            axpy(&mut gx[src as usize * c..][..c], wgt, grow);
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                acc(*a, g.iter().zip(val(*b)).map(|(gv, bv)| gv * bv).collect());
                acc(*b, g.iter().zip(val(*a)).map(|(gv, av)| gv * av).collect());
            }
            Op::MulBroadcast { x, m } => {
                let c = nodes[x.0].value.shape()[2];
                let ms = val(*m);
                let xs = val(*x);
                let mut gx = vec![0.0; g.len()];
                let mut gm = vec![0.0; ms.len()];
                for (cell, ((gr, xr), dr)) in g.chunks_exact(c).zip(xs.chunks_exact(c)).zip(gx.chunks_exact_mut(c)).enumerate() {
                    for ch in 0..c {
                        dr[ch] = gr[ch] * ms[cell];
                        gm[cell] += gr[ch] * xr[ch];
                    }
                }
                acc(*x, gx);
                acc(*m, gm);
            }
            Op::Affine { x, scale } => acc(*x, g.iter().map(|v| v * scale).collect()),
            Op::Concat(a, b) => {
                let ca = nodes[a.0].value.shape()[2];
                let cb = nodes[b.0].value.shape()[2];
                let mut ga = Vec::with_capacity(nodes[a.0].value.len());
                let mut gb = Vec::with_capacity(nodes[b.0].value.len());
                for row in g.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::CellMask { x, mask } => {
                let c = nodes[x.0].value.shape()[2];
                let mut gx = g.to_vec();
                for (row, mv) in gx.chunks_exact_mut(c).zip(mask.iter()) {
                    row.iter_mut().for_each(|v| *v *= mv);
                }
                acc(*x, gx);
            }
            Op::Mean(xs) => {
                let n = xs.len() as f64;
                for &v in xs {
                    acc(v, g.iter().map(|gv| gv / n).collect());
                }
            }
            Op::SumAll(x) => acc(*x, vec![g[0]; nodes[x.0].value.len()]),
            Op::Mse { pred, target, norm } => {
                let s = 2.0 * g[0] / norm;
                acc(*pred, val(*pred).iter().zip(target.iter()).map(|(p, t)| s * (p - t)).collect());
            }
            Op::SoftmaxXent { logits, labels } => {
                let k = nodes[logits.0].value.shape()[2];
                let s = g[0] / labels.len() as f64;
                let mut gz = val(*logits).to_vec();
                for (row, &lab) in gz.chunks_exact_mut(k).zip(labels.iter()) {
                    softmax_in_place(row);
                    row[lab as usize] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= s);
                }
                acc(*logits, gz);
            }
            Op::Focal { logits, targets, alpha, gamma, norm } => {
                let s = g[0] / norm;
                let gz = val(*logits)
                    .iter()
                    .zip(targets.iter())
                    .map(|(&z, &t)| s * focal_term(z, t, *alpha, *gamma).1)
                    .collect();
                acc(*logits, gz);
            }
            Op::SmoothL1 { pred, target, cell_weight, norm } => {
                let c = nodes[pred.0].value.shape()[2];
                let s = g[0] / norm;
                let gp = val(*pred)
                    .iter()
                    .zip(target.iter())
                    .enumerate()
                    .map(|(i, (p, t))| s * cell_weight[i / c] * smooth_l1(p - t).1)
                    .collect();
                acc(*pred, gp);
            }
        }
    }
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Focal loss for one logit and its derivative w.r.t. the logit.
fn focal_term(z: f64, t: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    // Signed logit so that pt = sigmoid(s) is the probability of the true label.
    let (s, sign, at) = if t > 0.5 { (z, 1.0, alpha) } else { (-z, -1.0, 1.0 - alpha) };
    let pt = sigmoid(s);
    let ln_pt = -softplus(-s);
    let q = 1.0 - pt;
    let loss = -at * q.powf(gamma) * ln_pt;
    let dlds = -at * (q.powf(gamma + 1.0) - gamma * q.powf(gamma) * pt * ln_pt);
    (loss, sign * dlds)
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}
