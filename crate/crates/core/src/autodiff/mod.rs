//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] owns every intermediate value. Operations append nodes and
//! return [`Var`] handles; since a node can only reference earlier nodes the
//! tape is acyclic and already in topological order, so [`Graph::backward`]
//! is a single reverse sweep.
//!
//! Every forward op checks its output for NaN/Inf and reports
//! [`Error::NonFinite`] instead of propagating it.

mod conv;
mod correlation;
mod pool;
mod sample;

pub use conv::{receptive_field, ConvSpec, DeconvSpec};
pub(crate) use sample::sample_row;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use conv::ConvShapes;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    Deconv2d { x: Var, w: Var, b: Option<Var>, spec: DeconvSpec },
    Elu { x: Var, alpha: T },
    MaxPool { x: Var, argmax: Vec<u32> },
    Resize { x: Var },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: T },
    Sum { x: Var },
    Pad { x: Var, top: usize, left: usize },
    Crop { x: Var, top: usize, left: usize },
    Correlation { left: Var, right: Var, levels: usize },
    Warp { src: Var, disp: Var },
    Huber { pred: Var, target: Tensor<T>, mask: Vec<bool>, count: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::Elu { .. } => "elu",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Resize { .. } => "upsample_bilinear",
            Op::Concat { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Pad { .. } => "pad",
            Op::Crop { .. } => "crop",
            Op::Correlation { .. } => "correlation",
            Op::Warp { .. } => "warp_horizontal",
            Op::Huber { .. } => "huber_loss",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// A single-writer computation tape.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    conv_weight_grad_scale: Option<T>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), conv_weight_grad_scale: None }
    }

    /// Test hook: scale every conv2d weight gradient by `factor`. Used to
    /// check that the gradient checker actually detects a wrong gradient.
    pub fn perturb_conv_weight_grads(&mut self, factor: T) {
        self.conv_weight_grad_scale = Some(factor);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// A leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `(op name, shape)` of every non-leaf node recorded at or after node
    /// index `start`. Used to audit the resolutions a subnetwork visits.
    pub fn op_shapes_since(&self, start: usize) -> impl Iterator<Item = (&'static str, &[usize])> + '_ {
        self.nodes[start.min(self.nodes.len())..]
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| (n.op.name(), n.value.shape()))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_raw(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name().to_string() });
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push_raw(op, value, needs))
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<[usize; 4]> {
        self.value(v).dims4(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let sh = ConvShapes::conv(self.dims4(x, "conv2d")?, spec)?;
        conv::check_weights(
            "conv2d",
            self.shape(w),
            spec.weight_shape(),
            b.map(|b| self.shape(b)),
            spec.out_channels,
        )?;
        let out = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &sh,
        );
        let shape = vec![sh.n, spec.out_channels, sh.geom.oh, sh.geom.ow];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Op::Conv2d { x, w, b, spec: *spec }, Tensor::from_parts(shape, out), &inputs)
    }

    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &DeconvSpec) -> Result<Var> {
        let sh = ConvShapes::deconv(self.dims4(x, "deconv2d")?, spec)?;
        conv::check_weights(
            "deconv2d",
            self.shape(w),
            spec.weight_shape(),
            b.map(|b| self.shape(b)),
            spec.out_channels,
        )?;
        let out = conv::deconv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &sh,
        );
        let shape = vec![sh.n, spec.out_channels, sh.geom.h, sh.geom.w];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Op::Deconv2d { x, w, b, spec: *spec }, Tensor::from_parts(shape, out), &inputs)
    }

    /// Exponential linear unit: `x` for `x >= 0`, `alpha (e^x - 1)` below.
    pub fn elu(&mut self, x: Var, alpha: T) -> Result<Var> {
        if alpha <= T::zero() {
            return Err(Error::config("elu alpha must be positive"));
        }
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { alpha * (v.exp() - T::one()) });
        self.push(Op::Elu { x, alpha }, out, &[x])
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "maxpool2d")?;
        let (oh, ow) = pool::output_dims(h, w, kernel, stride)?;
        let (out, argmax) = pool::maxpool_forward(self.value(x).data(), n * c, h, w, kernel, stride);
        self.push(Op::MaxPool { x, argmax }, Tensor::from_parts(vec![n, c, oh, ow], out), &[x])
    }

    /// Bilinear upsampling by an integer factor (align-corners false).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::config("upsample factor must be >= 1"));
        }
        let [_, _, h, w] = self.dims4(x, "upsample_bilinear")?;
        self.resize_bilinear(x, h * factor, w * factor)
    }

    /// Bilinear resize to an arbitrary output size (align-corners false).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "upsample_bilinear")?;
        if oh == 0 || ow == 0 {
            return Err(Error::shape("upsample_bilinear", "zero output size"));
        }
        let out = sample::resize_forward(self.value(x).data(), n * c, (h, w), (oh, ow));
        self.push(Op::Resize { x }, Tensor::from_parts(vec![n, c, oh, ow], out), &[x])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let [n, _, h, w] = self.dims4(first, "concat_channels")?;
        let mut total = 0;
        for &v in xs {
            let [vn, vc, vh, vw] = self.dims4(v, "concat_channels")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("input {:?} does not match N,H,W of {:?}", self.shape(v), self.shape(first)),
                ));
            }
            total += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for &v in xs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        self.push(Op::Concat { xs: xs.to_vec() }, Tensor::from_parts(vec![n, total, h, w], out), xs)
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(va.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add { a, b }, out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub { a, b }, out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul { a, b }, out, &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(Op::Scale { x, s }, out, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum { x }, out, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::lit(self.value(x).numel() as f64);
        let s = self.sum(x)?;
        self.scale(s, T::one() / n)
    }

    /// Zero-pad the spatial dims.
    pub fn pad(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "pad")?;
        let (oh, ow) = (h + top + bottom, w + left + right);
        let mut out = vec![T::zero(); n * c * oh * ow];
        let src = self.value(x).data();
        for p in 0..n * c {
            for y in 0..h {
                let s = &src[(p * h + y) * w..(p * h + y + 1) * w];
                let d = (p * oh + y + top) * ow + left;
                out[d..d + w].copy_from_slice(s);
            }
        }
        self.push(Op::Pad { x, top, left }, Tensor::from_parts(vec![n, c, oh, ow], out), &[x])
    }

    /// Spatial window `[top, top+h) x [left, left+w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let [n, c, ih, iw] = self.dims4(x, "crop")?;
        if h == 0 || w == 0 || top + h > ih || left + w > iw {
            return Err(Error::shape("crop", format!("window {h}x{w}+{top}+{left} outside {ih}x{iw}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in top..top + h {
                let s = (p * ih + y) * iw + left;
                out.extend_from_slice(&src[s..s + w]);
            }
        }
        self.push(Op::Crop { x, top, left }, Tensor::from_parts(vec![n, c, h, w], out), &[x])
    }

    /// Multiplicative 1x1 matching of left features against right features
    /// shifted by `0..levels` pixels, normalized by the channel count.
    pub fn correlation(&mut self, left: Var, right: Var, levels: usize) -> Result<Var> {
        if levels == 0 {
            return Err(Error::config("correlation needs at least one disparity level"));
        }
        self.same_shape(left, right, "correlation")?;
        let dims = self.dims4(left, "correlation")?;
        let out = correlation::forward(self.value(left).data(), self.value(right).data(), dims, levels);
        let [n, _, h, w] = dims;
        self.push(
            Op::Correlation { left, right, levels },
            Tensor::from_parts(vec![n, levels, h, w], out),
            &[left, right],
        )
    }

    /// Sample `src` at `x - disp(x, y)` along each row with linear
    /// interpolation; samples outside the image read zero.
    pub fn warp_horizontal(&mut self, src: Var, disp: Var) -> Result<Var> {
        let dims = self.dims4(src, "warp_horizontal")?;
        let [dn, dc, dh, dw] = self.dims4(disp, "warp_horizontal")?;
        if dc != 1 || (dn, dh, dw) != (dims[0], dims[2], dims[3]) {
            return Err(Error::shape(
                "warp_horizontal",
                format!("disparity {:?} incompatible with source {:?}", self.shape(disp), dims),
            ));
        }
        let out = sample::warp_forward(self.value(src).data(), self.value(disp).data(), dims);
        self.push(Op::Warp { src, disp }, Tensor::from_parts(dims.to_vec(), out), &[src, disp])
    }

    /// Mean Huber loss over masked pixels; `t = pred - target`,
    /// `0.5 t^2` for `|t| < 1`, `|t| - 0.5` otherwise.
    pub fn huber_loss(&mut self, pred: Var, target: &Tensor<T>, mask: &[bool]) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || mask.len() != p.numel() {
            return Err(Error::shape(
                "huber_loss",
                format!("prediction {:?}, target {:?}, mask of {}", p.shape(), target.shape(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Degenerate("huber loss over an empty mask".into()));
        }
        let half = T::lit(0.5);
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&d, &g), _)| {
                let t = (d - g).abs();
                if t < T::one() {
                    half * t * t
                } else {
                    t - half
                }
            })
            .sum();
        let out = Tensor::scalar(total / T::lit(count as f64));
        let op = Op::Huber { pred, target: target.clone(), mask: mask.to_vec(), count };
        self.push(op, out, &[pred])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, data: Vec<T>| {
            if !self.needs(v) {
                return;
            }
            let t = Tensor::from_parts(self.shape(v).to_vec(), data);
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let sh = ConvShapes::conv(self.value(*x).dims4("conv2d").expect("checked"), spec)
                    .expect("checked in forward");
                let (dx, mut dw, db) =
                    conv::conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, &sh, self.needs(*x));
                if let Some(f) = self.conv_weight_grad_scale {
                    dw.iter_mut().for_each(|v| *v *= f);
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Deconv2d { x, w, b, spec } => {
                let sh = ConvShapes::deconv(self.value(*x).dims4("deconv2d").expect("checked"), spec)
                    .expect("checked in forward");
                let (dx, dw, db) =
                    conv::deconv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, &sh, self.needs(*x));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Elu { x, alpha } => {
                let xv = self.value(*x).data();
                let d = xv
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v >= T::zero() { g } else { g * *alpha * v.exp() })
                    .collect();
                acc(*x, d);
            }
            Op::MaxPool { x, argmax } => {
                let [n, c, h, w] = self.value(*x).dims4("maxpool2d").expect("checked");
                acc(*x, pool::maxpool_backward(gd, argmax, n * c, h * w));
            }
            Op::Resize { x } => {
                let [n, c, h, w] = self.value(*x).dims4("resize").expect("checked");
                let (oh, ow) = (node.value.shape()[2], node.value.shape()[3]);
                acc(*x, sample::resize_backward(gd, n * c, (h, w), (oh, ow)));
            }
            Op::Concat { xs } => {
                let [n, total, h, w] = node.value.dims4("concat").expect("checked");
                let hw = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    let mut d = Vec::with_capacity(n * c * hw);
                    for b in 0..n {
                        let s = (b * total + offset) * hw;
                        d.extend_from_slice(&gd[s..s + c * hw]);
                    }
                    acc(v, d);
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub { a, b } => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                acc(*b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale { x, s } => acc(*x, gd.iter().map(|&g| g * *s).collect()),
            Op::Sum { x } => acc(*x, vec![gd[0]; self.value(*x).numel()]),
            Op::Pad { x, top, left } => {
                let [n, c, h, w] = self.value(*x).dims4("pad").expect("checked");
                let [_, _, oh, ow] = node.value.dims4("pad").expect("checked");
                let mut d = Vec::with_capacity(n * c * h * w);
                for p in 0..n * c {
                    for y in 0..h {
                        let s = (p * oh + y + top) * ow + left;
                        d.extend_from_slice(&gd[s..s + w]);
                    }
                }
                acc(*x, d);
            }
            Op::Crop { x, top, left } => {
                let [n, c, ih, iw] = self.value(*x).dims4("crop").expect("checked");
                let [_, _, h, w] = node.value.dims4("crop").expect("checked");
                let mut d = vec![T::zero(); n * c * ih * iw];
                for p in 0..n * c {
                    for y in 0..h {
                        let dst = (p * ih + y + top) * iw + left;
                        d[dst..dst + w].copy_from_slice(&gd[(p * h + y) * w..(p * h + y + 1) * w]);
                    }
                }
                acc(*x, d);
            }
            Op::Correlation { left, right, levels } => {
                let dims = self.value(*left).dims4("correlation").expect("checked");
                let (dl, dr) = correlation::backward(
                    self.value(*left).data(),
                    self.value(*right).data(),
                    gd,
                    dims,
                    *levels,
                    self.needs(*left),
                    self.needs(*right),
                );
                if let Some(dl) = dl {
                    acc(*left, dl);
                }
                if let Some(dr) = dr {
                    acc(*right, dr);
                }
            }
            Op::Warp { src, disp } => {
                let dims = self.value(*src).dims4("warp").expect("checked");
                let (ds, dd) = sample::warp_backward(
                    self.value(*src).data(),
                    self.value(*disp).data(),
                    gd,
                    dims,
                    self.needs(*src),
                    self.needs(*disp),
                );
                if let Some(ds) = ds {
                    acc(*src, ds);
                }
                if let Some(dd) = dd {
                    acc(*disp, dd);
                }
            }
            Op::Huber { pred, target, mask, count } => {
                let scale = gd[0] / T::lit(*count as f64);
                let p = self.value(*pred).data();
                let d = p
                    .iter()
                    .zip(target.data())
                    .zip(mask)
                    .map(|((&d, &t), &m)| {
                        if !m {
                            return T::zero();
                        }
                        let r = d - t;
                        let clipped = if r.abs() < T::one() { r } else { r.signum() };
                        clipped * scale
                    })
                    .collect();
                acc(*pred, d);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a node; zero-filled with the node's shape when the node
    /// was unreachable from the loss.
    pub fn get(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(graph.shape(v).to_vec()),
        }
    }

    /// Move a gradient out, if any reached the node.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn([2, 3, 4], |i| i as f64 - 7.0));
        let l = g.sum(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(&g, x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let mut g = Graph::new();
        let xv = Tensor::from_fn([1, 2, 3, 3], |i| (i as f64 * 0.7).sin());
        let x = g.variable(xv.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let l = g.scale(s, 0.5).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(&g, x).max_abs_diff(&xv) < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros([2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        let y = g.variable(t(&[3], &[1.0, 2.0, 3.0]));
        let l = g.sum(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(&g, y), Tensor::zeros([3]));
    }

    #[test]
    fn conv_sum_of_ones_center_is_nine() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let w = g.variable(Tensor::full([1, 1, 3, 3], 1.0));
        let b = g.variable(Tensor::zeros([1]));
        let y = g.conv2d(x, w, Some(b), &ConvSpec::same(1, 1, 3, 1)).unwrap();
        assert_eq!(g.value(y).at(0, 0, 1, 1), 9.0);
        assert_eq!(g.value(y).at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let xv = Tensor::from_fn([1, 1, 5, 4], |i| i as f64 * 0.5);
        let x = g.constant(xv.clone());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.variable(t(&[1, 1, 3, 3], &k));
        let y = g.conv2d(x, w, None, &ConvSpec::same(1, 1, 3, 1)).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn conv_shape_error_names_dimension() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([1, 2, 5, 5]));
        let w = g.variable(Tensor::zeros([4, 3, 3, 3]));
        let err = g.conv2d(x, w, None, &ConvSpec::same(2, 4, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("in_channels"), "{err}");
        let err = g.conv2d(x, w, None, &ConvSpec::same(3, 4, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("input channels 2"), "{err}");
    }

    #[test]
    fn deconv_unit_kernel_copies_blocks() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.variable(Tensor::full([1, 1, 2, 2], 1.0));
        let spec = DeconvSpec { kernel: 2, stride: 2, padding: 0, in_channels: 1, out_channels: 1 };
        let y = g.deconv2d(x, w, None, &spec).unwrap();
        let want = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(g.value(y), &t(&[1, 1, 4, 4], &want));
        let big = g.constant(Tensor::zeros([1, 1, 16, 16]));
        let y = g.deconv2d(big, w, None, &spec).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 32, 32]);
    }

    #[test]
    fn elu_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[2.0, 0.0, -1.0]));
        let y = g.elu(x, 1.0).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[0], 2.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - (-0.6321205588285577)).abs() < 1e-15);
        assert!(g.elu(x, 0.0).is_err());
    }

    #[test]
    fn elu_slope_at_zero_is_one() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1], &[0.0]));
        let y = g.elu(x, 1.0).unwrap();
        let l = g.sum(y).unwrap();
        assert_eq!(g.backward(l).unwrap().get(&g, x).item(), 1.0);
    }

    #[test]
    fn maxpool_window_maxima_and_first_index_ties() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn([1, 1, 4, 4], |i| (i + 1) as f64));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[6.0, 8.0, 14.0, 16.0]);

        let c = g.variable(Tensor::full([1, 1, 2, 2], 3.0));
        let y = g.maxpool2d(c, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(&g, c).data(), &[1.0, 0.0, 0.0, 0.0]);

        assert!(matches!(g.maxpool2d(c, 3, 3), Err(Error::Config(_))));
    }

    #[test]
    fn upsample_row_matches_hand_weights() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 2], &[0.0, 1.0]));
        let y = g.upsample_bilinear(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 4]);
        assert_eq!(&g.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        let c = g.constant(Tensor::full([1, 2, 3, 5], 5.0));
        for f in [2, 4, 8, 16, 64] {
            let y = g.upsample_bilinear(c, f).unwrap();
            assert!(g.value(y).data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
        }
    }

    #[test]
    fn concat_channel_arithmetic() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([2, 4, 3, 3]));
        let b = g.constant(Tensor::zeros([2, 8, 3, 3]));
        let y = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(y), &[2, 12, 3, 3]);
        let single = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.value(single), g.value(a));
        let bad = g.constant(Tensor::zeros([2, 1, 4, 3]));
        assert!(g.concat_channels(&[a, bad]).is_err());
    }

    #[test]
    fn huber_values_and_empty_mask() {
        let mut g = Graph::new();
        let gt = Tensor::from_fn([1, 1, 2, 2], |i| i as f64);
        let mask = vec![true; 4];
        for (off, want) in [(0.0, 0.0), (0.5, 0.125), (4.0, 3.5), (-4.0, 3.5)] {
            let p = g.variable(gt.map(|v| v + off));
            let l = g.huber_loss(p, &gt, &mask).unwrap();
            assert_eq!(g.value(l).item(), want);
        }
        let p = g.variable(gt.clone());
        assert!(matches!(g.huber_loss(p, &gt, &[false; 4]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn warp_identity_and_ramp() {
        let mut g = Graph::new();
        let src = Tensor::from_fn([1, 2, 3, 6], |i| (i % 6) as f64);
        let s = g.constant(src.clone());
        let zero = g.constant(Tensor::zeros([1, 1, 3, 6]));
        let y = g.warp_horizontal(s, zero).unwrap();
        assert_eq!(g.value(y), &src);
        let one = g.constant(Tensor::full([1, 1, 3, 6], 1.0));
        let y = g.warp_horizontal(s, one).unwrap();
        for x in 1..6 {
            assert_eq!(g.value(y).at(0, 1, 2, x), (x - 1) as f64);
        }
        assert_eq!(g.value(y).at(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[f64::MAX, 1.0]));
        let err = g.scale(x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref op } if op == "scale"));
    }

    #[test]
    fn pad_then_crop_round_trip() {
        let mut g = Graph::new();
        let xv = Tensor::from_fn([1, 2, 3, 4], |i| i as f64);
        let x = g.variable(xv.clone());
        let p = g.pad(x, 1, 2, 3, 0).unwrap();
        assert_eq!(g.shape(p), &[1, 2, 6, 7]);
        let c = g.crop(p, 1, 3, 3, 4).unwrap();
        assert_eq!(g.value(c), &xv);
        let l = g.sum(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(&g, x).data().iter().all(|&v| v == 1.0));
    }
}
