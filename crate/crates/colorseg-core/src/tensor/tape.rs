//! The dynamic autodiff tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Each op
//! appends a node recording its inputs, so insertion order is already a
//! topological order and [`Tape::backward`] is a single reverse sweep that
//! accumulates gradients into per-node buffers. Leaves are inserted with an
//! explicit `needs_grad` flag (true for parameters, false for images);
//! interior nodes need gradients iff any input does, and the sweep skips the
//! rest.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Probabilities are clamped into `[LOG_EPS, 1 - LOG_EPS]` inside every log
/// taken by the loss, both in the differentiated op and in the pure scoring
/// helpers, so perfect one-hot predictions stay finite.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a tape node. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeom,
    },
    /// `geom` is expressed in terms of the conv2d this op is the adjoint of:
    /// the transpose's input is shaped `[co,oh,ow]`, its output `[ci,h,w]`.
    ConvTranspose2d {
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeom,
    },
    AddChannelBias {
        input: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    ChannelNorm {
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
    },
    ChannelSoftmax {
        input: NodeId,
    },
    MaxPool2x2 {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        input: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    MulElem {
        a: NodeId,
        b: NodeId,
    },
    /// Pixel-wise weighted negative log-likelihood over a `[c,h,w]`
    /// probability map: `sum_p weights[p] * -ln(clamp(y[targets[p], p]))`.
    WeightedNll {
        input: NodeId,
        targets: Vec<u32>,
        weights: Vec<f64>,
    },
}

struct Node {
    values: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep, addressed by node id. `wrt`
/// returns `None` for nodes the loss does not depend on.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of a node computed during the forward pass.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].values
    }

    fn push(&mut self, values: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            values,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, values: Tensor, needs_grad: bool) -> NodeId {
        self.push(values, Op::Leaf, needs_grad)
    }

    /// 2-D cross-correlation: `[ci,h,w] ⊛ [co,ci,kh,kw] -> [co,oh,ow]` with
    /// `oh = (h + 2*padding - kh)/stride + 1`, which must divide exactly.
    /// Kernel sides must be odd.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let (ci, h, w) = self.value(input).dims3()?;
        let (co, cik, kh, kw) = self.value(kernel).dims4()?;
        if ci != cik {
            return Err(TensorError::Shape(format!(
                "conv2d: input has {ci} channels but kernel expects {cik}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::Shape(format!(
                "conv2d: kernel sides must be odd, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Shape("conv2d: stride must be >= 1".into()));
        }
        let geom = conv_geometry(ci, co, h, w, kh, kw, stride, padding)?;
        let mut out = Tensor::zeros(&[co, geom.oh, geom.ow]);
        kernels::conv_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            out.data_mut(),
            &geom,
        );
        let ng = self.needs(input) || self.needs(kernel);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, ng))
    }

    /// Adjoint of [`Tape::conv2d`] with the same kernel layout and geometry:
    /// maps `[co,oh,ow] -> [ci,h,w]` with `h = (oh-1)*stride + kh -
    /// 2*padding`. Even kernel sides are allowed here (2x2/stride-2 is the
    /// standard upsampling step).
    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let (cin, oh, ow) = self.value(input).dims3()?;
        let (co, ci, kh, kw) = self.value(kernel).dims4()?;
        if cin != co {
            return Err(TensorError::Shape(format!(
                "conv_transpose2d: input has {cin} channels but kernel expects {co}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Shape(
                "conv_transpose2d: stride must be >= 1".into(),
            ));
        }
        let h = ((oh - 1) * stride + kh) as isize - 2 * padding as isize;
        let w = ((ow - 1) * stride + kw) as isize - 2 * padding as isize;
        if h <= 0 || w <= 0 {
            return Err(TensorError::Shape(format!(
                "conv_transpose2d: output {h}x{w} not positive for input {oh}x{ow}, \
                 kernel {kh}x{kw}, stride {stride}, padding {padding}"
            )));
        }
        let geom = ConvGeom {
            ci,
            co,
            h: h as usize,
            w: w as usize,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        };
        let mut out = Tensor::zeros(&[ci, geom.h, geom.w]);
        kernels::conv_transpose_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            out.data_mut(),
            &geom,
        );
        let ng = self.needs(input) || self.needs(kernel);
        Ok(self.push(out, Op::ConvTranspose2d { input, kernel, geom }, ng))
    }

    /// Adds `bias[c]` to every pixel of channel c.
    pub fn add_channel_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (c, h, w) = self.value(input).dims3()?;
        if self.value(bias).shape() != [c] {
            return Err(TensorError::Shape(format!(
                "add_channel_bias: bias shape {:?} does not match {c} channels",
                self.value(bias).shape()
            )));
        }
        let mut out = self.value(input).clone();
        let bs = self.value(bias).data().to_vec();
        for ch in 0..c {
            let b = bs[ch];
            for v in &mut out.data_mut()[ch * h * w..(ch + 1) * h * w] {
                *v += b;
            }
        }
        let ng = self.needs(input) || self.needs(bias);
        Ok(self.push(out, Op::AddChannelBias { input, bias }, ng))
    }

    /// max(x, 0). The gradient at exactly 0 is defined as 0.
    pub fn relu(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        if !self.value(input).is_finite() {
            return Err(TensorError::NonFinite("relu"));
        }
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let ng = self.needs(input);
        Ok(self.push(out, Op::Relu { input }, ng))
    }

    /// Per-channel spatial normalization with learned gain/shift (see
    /// `kernels::channel_norm_forward`).
    pub fn channel_norm(
        &mut self,
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (c, h, w) = self.value(input).dims3()?;
        for (name, id) in [("gain", gain), ("shift", shift)] {
            if self.value(id).shape() != [c] {
                return Err(TensorError::Shape(format!(
                    "channel_norm: {name} shape {:?} does not match {c} channels",
                    self.value(id).shape()
                )));
            }
        }
        if !self.value(input).is_finite() {
            return Err(TensorError::NonFinite("channel_norm"));
        }
        let mut out = Tensor::zeros(&[c, h, w]);
        kernels::channel_norm_forward(
            self.value(input).data(),
            self.value(gain).data(),
            self.value(shift).data(),
            out.data_mut(),
            c,
            h * w,
        );
        let ng = self.needs(input) || self.needs(gain) || self.needs(shift);
        Ok(self.push(out, Op::ChannelNorm { input, gain, shift }, ng))
    }

    /// Softmax across the channel dimension, independently per pixel,
    /// computed with max subtraction for stability.
    pub fn channel_softmax(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let (c, h, w) = self.value(input).dims3()?;
        if !self.value(input).is_finite() {
            return Err(TensorError::NonFinite("channel_softmax"));
        }
        let mut out = Tensor::zeros(&[c, h, w]);
        kernels::channel_softmax_forward(self.value(input).data(), out.data_mut(), c, h * w);
        let ng = self.needs(input);
        Ok(self.push(out, Op::ChannelSoftmax { input }, ng))
    }

    /// 2x2 max pooling with stride 2; H and W must be even. On ties the
    /// first maximum in row-major window order receives the gradient.
    pub fn max_pool2x2(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let (c, h, w) = self.value(input).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Shape(format!(
                "max_pool2x2: spatial dims must be even, got {h}x{w}"
            )));
        }
        if !self.value(input).is_finite() {
            return Err(TensorError::NonFinite("max_pool2x2"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        {
            let x = self.value(input).data();
            let o = out.data_mut();
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = x[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        o[(ch * oh + oy) * ow + ox] = best;
                    }
                }
            }
        }
        let ng = self.needs(input);
        Ok(self.push(out, Op::MaxPool2x2 { input }, ng))
    }

    /// Stacks b's channels after a's; spatial dims must match.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(TensorError::Shape(format!(
                "concat_channels: spatial dims differ, {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        if !self.value(a).is_finite() || !self.value(b).is_finite() {
            return Err(TensorError::NonFinite("concat_channels"));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::from_vec(&[ca + cb, ha, wa], data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatChannels { a, b }, ng))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let mut acc = 0.0;
        for v in self.value(input).data() {
            acc += v;
        }
        let ng = self.needs(input);
        Ok(self.push(Tensor::scalar(acc), Op::Sum { input }, ng))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            *v *= factor;
        }
        let ng = self.needs(input);
        Ok(self.push(out, Op::Scale { input, factor }, ng))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::Shape(format!(
                "mul_elem: shapes differ, {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        for (o, bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= bv;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MulElem { a, b }, ng))
    }

    /// `sum_p weights[p] * -ln(clamp(y[targets[p], p]))` over a `[c,h,w]`
    /// probability map; targets/weights have one entry per pixel, row-major.
    pub fn weighted_nll(
        &mut self,
        input: NodeId,
        targets: Vec<u32>,
        weights: Vec<f64>,
    ) -> Result<NodeId, TensorError> {
        let (c, h, w) = self.value(input).dims3()?;
        let hw = h * w;
        if targets.len() != hw || weights.len() != hw {
            return Err(TensorError::Shape(format!(
                "weighted_nll: {} targets / {} weights for {hw} pixels",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t as usize >= c) {
            return Err(TensorError::Shape(format!(
                "weighted_nll: target channel {t} out of range for {c} channels"
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(TensorError::NonFinite("weighted_nll weights"));
        }
        let y = self.value(input).data();
        let mut acc = 0.0;
        for p in 0..hw {
            let v = y[targets[p] as usize * hw + p].clamp(LOG_EPS, 1.0 - LOG_EPS);
            acc -= weights[p] * crate::fmath::ln(v);
        }
        let ng = self.needs(input);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedNll {
                input,
                targets,
                weights,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar loss node. Returns per-node gradient
    /// buffers; nodes the loss does not reach (or that don't need gradients)
    /// stay `None`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.needs(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            // Inputs always precede their consumers on the tape, so the
            // upstream gradient can be split off immutably.
            let (lower, upper) = grads.split_at_mut(id);
            let g: &[f64] = upper[0].as_deref().unwrap();
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { input, kernel, geom } => {
                    if self.needs(*input) {
                        let buf = ensure(&mut lower[input.0], geom.ci * geom.h * geom.w);
                        kernels::conv_transpose_forward(g, self.value(*kernel).data(), buf, geom);
                    }
                    if self.needs(*kernel) {
                        let buf =
                            ensure(&mut lower[kernel.0], geom.co * geom.ci * geom.kh * geom.kw);
                        kernels::conv_kernel_grad(self.value(*input).data(), g, buf, geom);
                    }
                }
                Op::ConvTranspose2d { input, kernel, geom } => {
                    if self.needs(*input) {
                        let buf = ensure(&mut lower[input.0], geom.co * geom.oh * geom.ow);
                        kernels::conv_forward(g, self.value(*kernel).data(), buf, geom);
                    }
                    if self.needs(*kernel) {
                        let buf =
                            ensure(&mut lower[kernel.0], geom.co * geom.ci * geom.kh * geom.kw);
                        kernels::conv_kernel_grad(g, self.value(*input).data(), buf, geom);
                    }
                }
                Op::AddChannelBias { input, bias } => {
                    let (c, h, w) = self.value(*input).dims3().unwrap();
                    if self.needs(*input) {
                        let buf = ensure(&mut lower[input.0], c * h * w);
                        for (b, gv) in buf.iter_mut().zip(g) {
                            *b += gv;
                        }
                    }
                    if self.needs(*bias) {
                        let buf = ensure(&mut lower[bias.0], c);
                        for ch in 0..c {
                            let mut acc = 0.0;
                            for gv in &g[ch * h * w..(ch + 1) * h * w] {
                                acc += gv;
                            }
                            buf[ch] += acc;
                        }
                    }
                }
                Op::Relu { input } => {
                    if self.needs(*input) {
                        let x = self.value(*input).data();
                        let buf = ensure(&mut lower[input.0], x.len());
                        for i in 0..x.len() {
                            if x[i] > 0.0 {
                                buf[i] += g[i];
                            }
                        }
                    }
                }
                Op::ChannelNorm { input, gain, shift } => {
                    let (c, h, w) = self.value(*input).dims3().unwrap();
                    let hw = h * w;
                    // All three gradients fall out of one pass; compute into
                    // scratch, then add wherever a gradient is wanted.
                    let x = self.value(*input).data();
                    let gn = self.value(*gain).data();
                    let (need_x, need_g, need_s) =
                        (self.needs(*input), self.needs(*gain), self.needs(*shift));
                    let mut dx_scratch = vec![0.0; c * hw];
                    let mut dgain_scratch = vec![0.0; c];
                    let mut dshift_scratch = vec![0.0; c];
                    kernels::channel_norm_backward(
                        x,
                        gn,
                        g,
                        &mut dx_scratch,
                        &mut dgain_scratch,
                        &mut dshift_scratch,
                        c,
                        hw,
                    );
                    if need_x {
                        let buf = ensure(&mut lower[input.0], c * hw);
                        for (b, v) in buf.iter_mut().zip(&dx_scratch) {
                            *b += v;
                        }
                    }
                    if need_g {
                        let buf = ensure(&mut lower[gain.0], c);
                        for (b, v) in buf.iter_mut().zip(&dgain_scratch) {
                            *b += v;
                        }
                    }
                    if need_s {
                        let buf = ensure(&mut lower[shift.0], c);
                        for (b, v) in buf.iter_mut().zip(&dshift_scratch) {
                            *b += v;
                        }
                    }
                }
                Op::ChannelSoftmax { input } => {
                    if self.needs(*input) {
                        let (c, h, w) = self.value(*input).dims3().unwrap();
                        let buf = ensure(&mut lower[input.0], c * h * w);
                        kernels::channel_softmax_backward(node.values.data(), g, buf, c, h * w);
                    }
                }
                Op::MaxPool2x2 { input } => {
                    if self.needs(*input) {
                        let (c, h, w) = self.value(*input).dims3().unwrap();
                        let x = self.value(*input).data();
                        let (oh, ow) = (h / 2, w / 2);
                        let buf = ensure(&mut lower[input.0], c * h * w);
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut best_idx = 0;
                                    for dy in 0..2 {
                                        for dx in 0..2 {
                                            let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                                            if x[idx] > best {
                                                best = x[idx];
                                                best_idx = idx;
                                            }
                                        }
                                    }
                                    buf[best_idx] += g[(ch * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
                }
                Op::ConcatChannels { a, b } => {
                    let na = self.value(*a).numel();
                    if self.needs(*a) {
                        let buf = ensure(&mut lower[a.0], na);
                        for (bv, gv) in buf.iter_mut().zip(&g[..na]) {
                            *bv += gv;
                        }
                    }
                    if self.needs(*b) {
                        let nb = self.value(*b).numel();
                        let buf = ensure(&mut lower[b.0], nb);
                        for (bv, gv) in buf.iter_mut().zip(&g[na..]) {
                            *bv += gv;
                        }
                    }
                }
                Op::Sum { input } => {
                    if self.needs(*input) {
                        let n = self.value(*input).numel();
                        let buf = ensure(&mut lower[input.0], n);
                        for bv in buf.iter_mut() {
                            *bv += g[0];
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    if self.needs(*input) {
                        let n = self.value(*input).numel();
                        let buf = ensure(&mut lower[input.0], n);
                        for (bv, gv) in buf.iter_mut().zip(g) {
                            *bv += gv * factor;
                        }
                    }
                }
                Op::MulElem { a, b } => {
                    if self.needs(*a) {
                        let bd = self.value(*b).data();
                        let buf = ensure(&mut lower[a.0], bd.len());
                        for i in 0..bd.len() {
                            buf[i] += g[i] * bd[i];
                        }
                    }
                    if self.needs(*b) {
                        let ad = self.value(*a).data();
                        let buf = ensure(&mut lower[b.0], ad.len());
                        for i in 0..ad.len() {
                            buf[i] += g[i] * ad[i];
                        }
                    }
                }
                Op::WeightedNll {
                    input,
                    targets,
                    weights,
                } => {
                    if self.needs(*input) {
                        let (c, h, w) = self.value(*input).dims3().unwrap();
                        let hw = h * w;
                        let y = self.value(*input).data();
                        let buf = ensure(&mut lower[input.0], c * hw);
                        let g0 = g[0];
                        for p in 0..hw {
                            let idx = targets[p] as usize * hw + p;
                            let v = y[idx];
                            // Outside the clamp interval the loss is flat.
                            if v > LOG_EPS && v < 1.0 - LOG_EPS {
                                buf[idx] -= g0 * weights[p] / v;
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn ensure(slot: &mut Option<Vec<f64>>, n: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; n])
}

fn conv_geometry(
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom, TensorError> {
    let span_h = (h + 2 * padding) as isize - kh as isize;
    let span_w = (w + 2 * padding) as isize - kw as isize;
    if span_h < 0 || span_w < 0 || span_h as usize % stride != 0 || span_w as usize % stride != 0 {
        return Err(TensorError::Shape(format!(
            "conv2d: size {h}x{w} with kernel {kh}x{kw}, stride {stride}, padding {padding} \
             does not give an integer output size"
        )));
    }
    Ok(ConvGeom {
        ci,
        co,
        h,
        w,
        kh,
        kw,
        stride,
        padding,
        oh: span_h as usize / stride + 1,
        ow: span_w as usize / stride + 1,
    })
}
