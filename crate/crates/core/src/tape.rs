//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value and whatever
//! it needs for the backward pass. [`Tape::backward`] walks the nodes in
//! exact reverse order of recording and accumulates gradients for every node
//! that (transitively) depends on a leaf created with `requires_grad`.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::tensor::{Tensor, TensorError};

/// Floor applied to probabilities before taking logarithms or renormalising.
pub const PROB_EPS: f64 = 1e-8;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddChannelBias(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Concat(Vec<Var>),
    SoftmaxChannels(Var),
    RenormalizeChannels {
        input: Var,
        sums: Vec<f64>,
    },
    CrossEntropy {
        probs: Var,
        // d loss / d p at each pixel's target channel, zero for skipped pixels.
        pixel_grad: Vec<(usize, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Result of cross-entropy evaluation flags.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossFlags {
    /// The pixel mask selected nothing; the loss was defined as zero.
    pub empty_mask: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, or zeros of the given length when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Recording context for one forward/backward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_calls: usize,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Number of completed backward passes on this tape.
    pub fn backward_calls(&self) -> usize {
        self.backward_calls
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Same-padded 2-D cross-correlation of `[Cin, H, W]` with `[Cout, Cin, k, k]`, `k` odd.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        let (cin, h, w) = self.value(input).chw(OP)?;
        let kshape = self.shape(kernel).to_vec();
        let &[cout, kcin, kh, kw] = kshape.as_slice() else {
            return Err(TensorError::Rank {
                op: OP,
                expected: 4,
                found: kshape,
            });
        };
        if kcin != cin {
            return Err(TensorError::mismatch(OP, "input channels", kcin, cin));
        }
        if kh != kw {
            return Err(TensorError::mismatch(OP, "kernel width", kh, kw));
        }
        if kh % 2 == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("kernel size {kh} must be odd"),
            });
        }
        if let Some(b) = bias {
            let bshape = self.shape(b);
            if bshape.len() != 1 || bshape[0] != cout {
                return Err(TensorError::mismatch(OP, "bias length", cout, bshape.iter().product()));
            }
        }
        let k = kh;
        let plane = h * w;
        let cols = im2col(self.value(input).data(), cin, h, w, k);
        let mut out = vec![0.0; cout * plane];
        gemm(
            cout,
            cin * k * k,
            plane,
            self.value(kernel).data(),
            false,
            &cols,
            false,
            &mut out,
            0.0,
        );
        if let Some(b) = bias {
            let bias_data = self.value(b).data();
            for (co, chunk) in out.chunks_exact_mut(plane).enumerate() {
                let bv = bias_data[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        let value = Tensor::new(vec![cout, h, w], out).expect("conv output shape");
        Ok(self.push(value, rg, Op::Conv2d { input, kernel, bias }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != sb.len() {
            return Err(TensorError::Rank {
                op,
                expected: sa.len(),
                found: sb.to_vec(),
            });
        }
        for (i, (&x, &y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(TensorError::mismatch(op, format!("axis {i}"), x, y));
            }
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.same_shape(op_name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("unary keeps shape");
        let rg = self.any_grad(&[a]);
        self.push(value, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard (element-wise) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("hadamard", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    /// Adds a length-C bias to every pixel of a `[C, H, W]` tensor.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        const OP: &str = "add_channel_bias";
        let (c, h, w) = self.value(a).chw(OP)?;
        let bshape = self.shape(bias);
        if bshape.len() != 1 || bshape[0] != c {
            return Err(TensorError::mismatch(OP, "bias length", c, bshape.iter().product()));
        }
        let plane = h * w;
        let bias_data = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for (ch, chunk) in data.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bias_data[ch]);
        }
        let value = Tensor::new(vec![c, h, w], data)?;
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(value, rg, Op::AddChannelBias(a, bias)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), rg, Op::Sum(a))
    }

    /// Concatenates `[Ci, H, W]` tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        const OP: &str = "concat_channels";
        let Some(&first) = parts.first() else {
            return Err(TensorError::Invalid {
                op: OP,
                msg: "no tensors to concatenate".into(),
            });
        };
        let (_, h, w) = self.value(first).chw(OP)?;
        let mut total = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw(OP)?;
            if ph != h {
                return Err(TensorError::mismatch(OP, "height", h, ph));
            }
            if pw != w {
                return Err(TensorError::mismatch(OP, "width", w, pw));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(total * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![total, h, w], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, rg, Op::Concat(parts.to_vec())))
    }

    /// Softmax over the channel axis of `[C, H, W]` logits, max-subtracted.
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var, TensorError> {
        let (c, h, w) = self.value(logits).chw("softmax_channels")?;
        let plane = h * w;
        let x = self.value(logits).data();
        let mut out = vec![0.0; c * plane];
        for p in 0..plane {
            let max = (0..c).map(|ch| x[ch * plane + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (x[ch * plane + p] - max).exp();
                out[ch * plane + p] = e;
                sum += e;
            }
            for ch in 0..c {
                out[ch * plane + p] /= sum;
            }
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(value, rg, Op::SoftmaxChannels(logits)))
    }

    /// Clamps entries to at least [`PROB_EPS`] and divides by the per-pixel channel sum.
    pub fn renormalize_channels(&mut self, a: Var) -> Result<Var, TensorError> {
        let (c, h, w) = self.value(a).chw("renormalize_channels")?;
        let plane = h * w;
        let x = self.value(a).data();
        let mut sums = vec![0.0; plane];
        for ch in 0..c {
            for p in 0..plane {
                sums[p] += x[ch * plane + p].max(PROB_EPS);
            }
        }
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            for p in 0..plane {
                out[ch * plane + p] = x[ch * plane + p].max(PROB_EPS) / sums[p];
            }
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, rg, Op::RenormalizeChannels { input: a, sums }))
    }

    /// Masked, optionally class-weighted mean cross-entropy of a `[C, H, W]`
    /// probability volume against per-pixel targets.
    ///
    /// Each selected pixel contributes `-w[y] * ln(max(p_y, 1e-8))`; the sum
    /// is divided by the number of selected pixels. An empty mask yields a
    /// zero loss and sets [`LossFlags::empty_mask`].
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        target: &[u16],
        mask: &[bool],
        class_weights: Option<&[f64]>,
    ) -> Result<(Var, LossFlags), TensorError> {
        const OP: &str = "cross_entropy";
        let (c, h, w) = self.value(probs).chw(OP)?;
        let plane = h * w;
        if target.len() != plane {
            return Err(TensorError::mismatch(OP, "target pixels", plane, target.len()));
        }
        if mask.len() != plane {
            return Err(TensorError::mismatch(OP, "mask pixels", plane, mask.len()));
        }
        if let Some(cw) = class_weights {
            if cw.len() != c {
                return Err(TensorError::mismatch(OP, "class weights", c, cw.len()));
            }
        }
        let count = mask.iter().filter(|&&m| m).count();
        let p = self.value(probs).data();
        let mut loss = 0.0;
        let mut pixel_grad = Vec::with_capacity(count);
        for px in 0..plane {
            if !mask[px] {
                continue;
            }
            let y = target[px] as usize;
            if y >= c {
                return Err(TensorError::Invalid {
                    op: OP,
                    msg: format!("target class {y} at pixel {px} out of range for {c} classes"),
                });
            }
            let weight = class_weights.map_or(1.0, |cw| cw[y]);
            let idx = y * plane + px;
            let py = p[idx];
            loss -= weight * py.max(PROB_EPS).ln();
            let g = if py > PROB_EPS {
                -weight / (py * count as f64)
            } else {
                0.0
            };
            pixel_grad.push((idx, g));
        }
        let flags = LossFlags {
            empty_mask: count == 0,
        };
        if count > 0 {
            loss /= count as f64;
        } else {
            log::warn!("cross_entropy: empty pixel mask, loss defined as 0");
        }
        let rg = self.any_grad(&[probs]);
        let var = self.push(Tensor::scalar(loss), rg, Op::CrossEntropy { probs, pixel_grad });
        Ok((var, flags))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, TensorError> {
        if self.value(output).len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("output must be a scalar, found shape {:?}", self.shape(output)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.backward_calls += 1;
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if wants(v) {
                        accumulate(grads, v, g.iter().copied());
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().copied());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.iter().map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let va = nodes[a.0].value.data();
                let vb = nodes[b.0].value.data();
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(vb).map(|(x, y)| x * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, g.iter().zip(va).map(|(x, y)| x * y));
                }
            }
            Op::Scale(a, factor) => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().map(|x| x * factor));
                }
            }
            Op::AddChannelBias(a, bias) => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().copied());
                }
                if wants(*bias) {
                    let c = nodes[bias.0].value.len();
                    let plane = g.len() / c;
                    let sums = g.chunks_exact(plane).map(|ch| ch.iter().sum::<f64>());
                    accumulate(grads, *bias, sums);
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    accumulate(grads, *a, g.iter().zip(y).map(|(x, s)| x * s * (1.0 - s)));
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    accumulate(grads, *a, g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)));
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let xin = nodes[a.0].value.data();
                    accumulate(grads, *a, g.iter().zip(xin).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }));
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let n = nodes[a.0].value.len();
                    accumulate(grads, *a, std::iter::repeat_n(g[0], n));
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if wants(p) {
                        accumulate(grads, p, g[offset..offset + n].iter().copied());
                    }
                    offset += n;
                }
            }
            Op::SoftmaxChannels(a) => {
                if wants(*a) {
                    let (c, h, w) = node.value.chw("softmax_channels").expect("rank 3");
                    let plane = h * w;
                    let y = node.value.data();
                    let mut out = vec![0.0; y.len()];
                    for p in 0..plane {
                        let dot: f64 = (0..c).map(|ch| g[ch * plane + p] * y[ch * plane + p]).sum();
                        for ch in 0..c {
                            let i = ch * plane + p;
                            out[i] = y[i] * (g[i] - dot);
                        }
                    }
                    accumulate(grads, *a, out.into_iter());
                }
            }
            Op::RenormalizeChannels { input, sums } => {
                if wants(*input) {
                    let (c, h, w) = node.value.chw("renormalize_channels").expect("rank 3");
                    let plane = h * w;
                    let y = node.value.data();
                    let x = nodes[input.0].value.data();
                    let mut out = vec![0.0; y.len()];
                    for p in 0..plane {
                        let dot: f64 = (0..c).map(|ch| g[ch * plane + p] * y[ch * plane + p]).sum();
                        for ch in 0..c {
                            let i = ch * plane + p;
                            if x[i] > PROB_EPS {
                                out[i] = (g[i] - dot) / sums[p];
                            }
                        }
                    }
                    accumulate(grads, *input, out.into_iter());
                }
            }
            Op::CrossEntropy { probs, pixel_grad } => {
                if wants(*probs) {
                    let n = nodes[probs.0].value.len();
                    let slot = grads[probs.0].get_or_insert_with(|| vec![0.0; n]);
                    for &(idx, d) in pixel_grad {
                        slot[idx] += g[0] * d;
                    }
                }
            }
            Op::Conv2d { input, kernel, bias } => {
                let xin = &nodes[input.0].value;
                let (cin, h, w) = xin.chw("conv2d").expect("rank 3");
                let kval = &nodes[kernel.0].value;
                let cout = kval.shape()[0];
                let k = kval.shape()[2];
                let plane = h * w;
                let kk = cin * k * k;
                if let Some(b) = bias {
                    if wants(*b) {
                        let sums = g.chunks_exact(plane).map(|ch| ch.iter().sum::<f64>());
                        accumulate(grads, *b, sums);
                    }
                }
                let need_kernel = wants(*kernel);
                let need_input = wants(*input);
                if need_kernel {
                    let cols = im2col(xin.data(), cin, h, w, k);
                    let slot = grads[kernel.0].get_or_insert_with(|| vec![0.0; cout * kk]);
                    // dK[cout, kk] += dY[cout, plane] * cols[kk, plane]^T
                    gemm(cout, plane, kk, g, false, &cols, true, slot, 1.0);
                }
                if need_input {
                    let mut dcols = vec![0.0; kk * plane];
                    // dcols[kk, plane] = K[cout, kk]^T * dY[cout, plane]
                    gemm(kk, cout, plane, kval.data(), true, g, false, &mut dcols, 0.0);
                    let slot = grads[input.0].get_or_insert_with(|| vec![0.0; cin * plane]);
                    col2im_add(&dcols, cin, h, w, k, slot);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, values: impl Iterator<Item = f64>) {
    match &mut grads[var.0] {
        Some(existing) => existing.iter_mut().zip(values).for_each(|(e, v)| *e += v),
        slot @ None => *slot = Some(values.collect()),
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

/// Unfolds a zero-padded `[C, H, W]` image into `[C*k*k, H*W]` patches.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let plane = h * w;
    let mut cols = vec![0.0; c * k * k * plane];
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).clamp(0, w as isize) as usize;
                let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let d0 = y * w;
                    let s0 = (sy * w) as isize + dx;
                    dst[d0 + x_lo..d0 + x_hi]
                        .copy_from_slice(&src[(s0 + x_lo as isize) as usize..(s0 + x_hi as isize) as usize]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, k: usize, out: &mut [f64]) {
    let pad = k / 2;
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).clamp(0, w as isize) as usize;
                let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = ((sy as usize) * w) as isize + dx;
                    let d = &mut dst[(s0 + x_lo as isize) as usize..(s0 + x_hi as isize) as usize];
                    let s = &src[y * w + x_lo..y * w + x_hi];
                    d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

/// `c = a' * b' + beta * c` with `a'` `[m, k]`, `b'` `[k, n]`, where the
/// primes denote optional transposition of the row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    let a_view = if a_t {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let b_view = if b_t {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut c_view = ArrayViewMut2::from_shape((m, n), c).expect("gemm out");
    general_mat_mul(1.0, &a_view, &b_view, beta, &mut c_view);
}
