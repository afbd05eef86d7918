//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and whatever the
//! backward pass needs. Nodes are immutable once pushed; gradients live in a
//! separate [`Gradients`] buffer produced by [`Graph::backward`].

use super::kernels::{self, ConvGeometry};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Inference,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const BCE_EPS: f64 = 1e-7;

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|&v| U::lit(v.to_f64())).collect(),
            var: self.var.iter().map(|&v| U::lit(v.to_f64())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geometry: ConvGeometry,
}

enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d(Conv),
    /// Geometry is that of the adjoint convolution mapping output to input.
    ConvTranspose2d(Conv),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    Reshape {
        x: Var,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Bce {
        pred: Var,
        target: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of one scalar with respect to every node that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], delta: Vec<T>) {
    match slot {
        Some(g) => {
            for (a, d) in g.data_mut().iter_mut().zip(delta) {
                *a = *a + d;
            }
        }
        None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta)),
    }
}

/// Largest value below one that saturated outputs are held to, so tanh and
/// sigmoid stay inside their open ranges.
fn below_one<T: Scalar>() -> T {
    T::one() - T::epsilon()
}

fn tanh<T: Scalar>(x: T) -> T {
    x.tanh().max(-below_one::<T>()).min(below_one())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(below_one())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by node values; a proxy for activation memory.
    pub fn value_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let saved = match &n.op {
                    Op::BatchNorm { xhat, inv_std, .. } => xhat.len() + inv_std.len(),
                    _ => 0,
                };
                (n.value.len() + saved) * std::mem::size_of::<T>()
            })
            .sum()
    }

    /// Whether each relu input is positive, over every relu in the graph in
    /// node order. Two graphs of the same program with equal patterns lie on
    /// the same smooth piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Activation { x, kind: Activation::Relu } => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// `y = x w + b` for `x: [B, I]`, `w: [I, O]`, `b: [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Dimension(format!(
                "dense: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (batch, inner, outer) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.value(b).shape() != [outer] {
                return Err(Error::Dimension(format!(
                    "dense: bias {:?} must be [{outer}]",
                    self.value(b).shape()
                )));
            }
        }
        let mut out = kernels::matmul(self.value(x).data(), self.value(w).data(), batch, inner, outer);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(outer) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v = *v + bv;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(
            "dense",
            Tensor::from_parts(vec![batch, outer], out),
            Op::Dense { x, w, b },
            rg,
        )
    }

    fn conv_inputs(&self, x: Var, k: Var, bias: Option<Var>, transposed: bool) -> Result<([usize; 4], [usize; 4])> {
        let xs = self.value(x).shape();
        let ks = self.value(k).shape();
        let op = if transposed { "conv_transpose2d" } else { "conv2d" };
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Dimension(format!(
                "{op}: expected 4-d input and kernel, got {xs:?} and {ks:?}"
            )));
        }
        if xs[1] != ks[if transposed { 0 } else { 1 }] {
            return Err(Error::Dimension(format!(
                "{op}: input channels of {xs:?} do not match kernel {ks:?}"
            )));
        }
        let out_c = ks[if transposed { 1 } else { 0 }];
        if let Some(b) = bias {
            if self.value(b).shape() != [out_c] {
                return Err(Error::Dimension(format!("{op}: bias must be [{out_c}]")));
            }
        }
        Ok((
            [xs[0], xs[1], xs[2], xs[3]],
            [ks[0], ks[1], ks[2], ks[3]],
        ))
    }

    fn add_channel_bias(&self, out: &mut [T], bias: Option<Var>, channels: usize, plane: usize) {
        if let Some(b) = bias {
            let bias = self.value(b).data();
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = bias[i % channels];
                for v in chunk {
                    *v = *v + bv;
                }
            }
        }
    }

    /// Cross-correlation of `x: [B, C, H, W]` with `k: [O, C, Kh, Kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let ([b, c, h, w], [o, _, kh, kw]) = self.conv_inputs(x, k, bias, false)?;
        if stride == 0 {
            return Err(Error::Dimension("conv2d: stride must be positive".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let geometry = ConvGeometry {
            batch: b,
            in_channels: c,
            out_channels: o,
            in_h: h,
            in_w: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        };
        let (oh, ow) = (geometry.out_h(), geometry.out_w());
        let mut out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), &geometry);
        self.add_channel_bias(&mut out, bias, o, oh * ow);
        let mut deps = vec![x, k];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        self.push(
            "conv2d",
            Tensor::from_parts(vec![b, o, oh, ow], out),
            Op::Conv2d(Conv {
                input: x,
                kernel: k,
                bias,
                geometry,
            }),
            rg,
        )
    }

    /// Transposed convolution of `x: [B, C, H, W]` with `k: [C, O, Kh, Kw]`;
    /// output size `(H - 1) * stride - 2 * pad + Kh`.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let ([b, c, h, w], [_, o, kh, kw]) = self.conv_inputs(x, k, bias, true)?;
        if stride == 0 {
            return Err(Error::Dimension("conv_transpose2d: stride must be positive".into()));
        }
        let oh = (h as isize - 1) * stride as isize - 2 * pad as isize + kh as isize;
        let ow = (w as isize - 1) * stride as isize - 2 * pad as isize + kw as isize;
        if oh <= 0 || ow <= 0 {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: computed output size {oh}x{ow} is not positive"
            )));
        }
        let (oh, ow) = (oh as usize, ow as usize);
        // The adjoint convolution maps [B, O, oh, ow] back to [B, C, h, w].
        let geometry = ConvGeometry {
            batch: b,
            in_channels: o,
            out_channels: c,
            in_h: oh,
            in_w: ow,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        };
        debug_assert_eq!((geometry.out_h(), geometry.out_w()), (h, w));
        let mut out = kernels::conv2d_backward_input(self.value(x).data(), self.value(k).data(), &geometry);
        self.add_channel_bias(&mut out, bias, o, oh * ow);
        let mut deps = vec![x, k];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        self.push(
            "conv_transpose2d",
            Tensor::from_parts(vec![b, o, oh, ow], out),
            Op::ConvTranspose2d(Conv {
                input: x,
                kernel: k,
                bias,
                geometry,
            }),
            rg,
        )
    }

    /// Per-channel normalization of `x: [B, C, ...]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::Dimension(format!("batch_norm: input {shape:?} needs [B, C, ...]")));
        }
        let (batch, channels) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if self.value(gamma).shape() != [channels] || self.value(beta).shape() != [channels] {
            return Err(Error::Dimension(format!("batch_norm: gamma and beta must be [{channels}]")));
        }
        if stats.channels() != channels {
            return Err(Error::Dimension(format!(
                "batch_norm: running stats for {} channels, input has {channels}",
                stats.channels()
            )));
        }
        let training = mode == BatchNormMode::Train;
        if training && batch < 2 {
            return Err(Error::BatchSize(format!(
                "batch_norm in training mode needs at least 2 samples, got {batch}"
            )));
        }
        let eps = T::lit(BATCH_NORM_EPS);
        let momentum = T::lit(BATCH_NORM_MOMENTUM);
        let data = self.value(x).data();
        let count = batch * spatial;
        let n = T::from_usize(count).unwrap();
        let mut inv_std = vec![T::zero(); channels];
        let mut mean = vec![T::zero(); channels];
        for ch in 0..channels {
            let (mu, var) = if training {
                let mut sum = T::zero();
                for b in 0..batch {
                    let off = (b * channels + ch) * spatial;
                    sum = sum + data[off..off + spatial].iter().copied().sum::<T>();
                }
                let mu = sum / n;
                let mut sq = T::zero();
                for b in 0..batch {
                    let off = (b * channels + ch) * spatial;
                    sq = sq + data[off..off + spatial].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                let var = sq / n;
                let unbiased = if count > 1 {
                    sq / T::from_usize(count - 1).unwrap()
                } else {
                    var
                };
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mu;
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * unbiased;
                (mu, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            mean[ch] = mu;
            inv_std[ch] = T::one() / (var + eps).sqrt();
        }
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for (i, (xh, o)) in xhat.chunks_mut(spatial).zip(out.chunks_mut(spatial)).enumerate() {
            let ch = i % channels;
            let src = &data[i * spatial..][..spatial];
            for ((xv, ov), &s) in xh.iter_mut().zip(o.iter_mut()).zip(src) {
                *xv = (s - mean[ch]) * inv_std[ch];
                *ov = g[ch] * *xv + be[ch];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            "batch_norm",
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let src = self.value(x);
        let f: fn(T) -> T = match kind {
            Activation::Relu => |v| if v > T::zero() { v } else { T::zero() },
            Activation::Tanh => tanh,
            Activation::Sigmoid => sigmoid,
        };
        let out = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect());
        let rg = self.any_grad(&[x]);
        let name = match kind {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        };
        self.push(name, out, Op::Activation { x, kind }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        self.push("reshape", out, Op::Reshape { x }, rg)
    }

    /// Concatenates `[B, Ci, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::Dimension("concat: no inputs".into()))?)
            .shape()
            .to_vec();
        if first.len() != 4 {
            return Err(Error::Dimension(format!("concat: expected 4-d tensors, got {first:?}")));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(Error::Dimension(format!("concat: {s:?} incompatible with {first:?}")));
            }
            channels += s[1];
        }
        let (batch, plane) = (first[0], first[2] * first[3]);
        let mut out = Vec::with_capacity(batch * channels * plane);
        for b in 0..batch {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                out.extend_from_slice(&v.data()[b * c * plane..][..c * plane]);
            }
        }
        let rg = self.any_grad(parts);
        self.push(
            "concat",
            Tensor::from_parts(vec![batch, channels, first[2], first[3]], out),
            Op::ConcatChannels { parts: parts.to_vec() },
            rg,
        )
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let sum: T = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let loss = sum / T::from_usize(p.len()).unwrap();
        let rg = self.any_grad(&[pred, target]);
        self.push("mse_loss", Tensor::scalar(loss), Op::Mse { pred, target }, rg)
    }

    /// Mean binary cross entropy; predictions are clamped to `[eps, 1 - eps]`
    /// and targets must be exactly 0 or 1.
    pub fn bce_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "bce_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if let Some(bad) = t.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::Validation(format!("bce_loss: target {bad:?} not in {{0, 1}}")));
        }
        let eps = T::lit(BCE_EPS);
        let sum: T = p
            .iter()
            .zip(t)
            .map(|(&pv, &y)| {
                let pc = pv.max(eps).min(T::one() - eps);
                -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
            })
            .sum();
        let loss = sum / T::from_usize(p.len()).unwrap();
        let rg = self.any_grad(&[pred, target]);
        self.push("bce_loss", Tensor::scalar(loss), Op::Bce { pred, target }, rg)
    }

    /// `sum_i w_i * x_i` over same-shape tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (&(first, _), rest) = terms
            .split_first()
            .ok_or_else(|| Error::Dimension("weighted_sum: no terms".into()))?;
        for &(v, _) in rest {
            self.same_shape(first, v, "weighted_sum")?;
        }
        let mut out = vec![T::zero(); self.value(first).len()];
        for &(v, w) in terms {
            for (o, &x) in out.iter_mut().zip(self.value(v).data()) {
                *o = *o + w * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        let shape = self.value(first).shape().to_vec();
        self.push(
            "weighted_sum",
            Tensor::from_parts(shape, out),
            Op::WeightedSum { terms: terms.to_vec() },
            rg,
        )
    }

    /// Back-propagates from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward: loss must be a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let gyd = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xs, ws) = (self.value(*x).shape(), self.value(*w).shape());
                let (batch, inner, outer) = (xs[0], xs[1], ws[1]);
                let (gx, gw) = kernels::matmul_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gyd,
                    batch,
                    inner,
                    outer,
                );
                if needs(*x) {
                    accumulate(&mut grads[x.0], xs, gx);
                }
                if needs(*w) {
                    accumulate(&mut grads[w.0], ws, gw);
                }
                if let Some(b) = b.filter(|&b| needs(b)) {
                    let mut gb = vec![T::zero(); outer];
                    for row in gyd.chunks(outer) {
                        for (a, &g) in gb.iter_mut().zip(row) {
                            *a = *a + g;
                        }
                    }
                    accumulate(&mut grads[b.0], &[outer], gb);
                }
            }
            Op::Conv2d(conv) => {
                let g = &conv.geometry;
                if needs(conv.input) {
                    let gx = kernels::conv2d_backward_input(gyd, self.value(conv.kernel).data(), g);
                    accumulate(&mut grads[conv.input.0], self.value(conv.input).shape(), gx);
                }
                if needs(conv.kernel) {
                    let gk = kernels::conv2d_backward_kernel(self.value(conv.input).data(), gyd, g);
                    accumulate(&mut grads[conv.kernel.0], self.value(conv.kernel).shape(), gk);
                }
                if let Some(b) = conv.bias.filter(|&b| needs(b)) {
                    let gb = channel_sums(gyd, g.out_channels, g.out_h() * g.out_w());
                    accumulate(&mut grads[b.0], &[g.out_channels], gb);
                }
            }
            Op::ConvTranspose2d(conv) => {
                // Forward was the adjoint conv's input-gradient, so the roles swap.
                let g = &conv.geometry;
                if needs(conv.input) {
                    let gx = kernels::conv2d_forward(gyd, self.value(conv.kernel).data(), g);
                    accumulate(&mut grads[conv.input.0], self.value(conv.input).shape(), gx);
                }
                if needs(conv.kernel) {
                    let gk = kernels::conv2d_backward_kernel(gyd, self.value(conv.input).data(), g);
                    accumulate(&mut grads[conv.kernel.0], self.value(conv.kernel).shape(), gk);
                }
                if let Some(b) = conv.bias.filter(|&b| needs(b)) {
                    let gb = channel_sums(gyd, g.in_channels, g.in_h * g.in_w);
                    accumulate(&mut grads[b.0], &[g.in_channels], gb);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let shape = self.value(*x).shape();
                let channels = shape[1];
                let spatial: usize = shape[2..].iter().product();
                let mut sum_dy = vec![T::zero(); channels];
                let mut sum_dy_xhat = vec![T::zero(); channels];
                for (i, (gc, xc)) in gyd.chunks(spatial).zip(xhat.chunks(spatial)).enumerate() {
                    let ch = i % channels;
                    sum_dy[ch] = sum_dy[ch] + gc.iter().copied().sum::<T>();
                    sum_dy_xhat[ch] = sum_dy_xhat[ch] + kernels::dot(gc, xc);
                }
                if needs(*gamma) {
                    accumulate(&mut grads[gamma.0], &[channels], sum_dy_xhat.clone());
                }
                if needs(*beta) {
                    accumulate(&mut grads[beta.0], &[channels], sum_dy.clone());
                }
                if needs(*x) {
                    let g = self.value(*gamma).data();
                    let n = T::from_usize(gyd.len() / channels).unwrap();
                    let mut gx = vec![T::zero(); gyd.len()];
                    for (i, ((o, gc), xc)) in gx
                        .chunks_mut(spatial)
                        .zip(gyd.chunks(spatial))
                        .zip(xhat.chunks(spatial))
                        .enumerate()
                    {
                        let ch = i % channels;
                        let scale = g[ch] * inv_std[ch];
                        if *training {
                            let mean_dy = sum_dy[ch] / n;
                            let mean_dy_xhat = sum_dy_xhat[ch] / n;
                            for ((ov, &d), &xh) in o.iter_mut().zip(gc).zip(xc) {
                                *ov = scale * (d - mean_dy - xh * mean_dy_xhat);
                            }
                        } else {
                            for (ov, &d) in o.iter_mut().zip(gc) {
                                *ov = scale * d;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], shape, gx);
                }
            }
            Op::Activation { x, kind } => {
                if needs(*x) {
                    let y = node.value.data();
                    let gx: Vec<T> = match kind {
                        Activation::Relu => gyd
                            .iter()
                            .zip(self.value(*x).data())
                            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                            .collect(),
                        Activation::Tanh => gyd.iter().zip(y).map(|(&g, &t)| g * (T::one() - t * t)).collect(),
                        Activation::Sigmoid => gyd.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect(),
                    };
                    accumulate(&mut grads[x.0], self.value(*x).shape(), gx);
                }
            }
            Op::Reshape { x } => {
                if needs(*x) {
                    accumulate(&mut grads[x.0], self.value(*x).shape(), gyd.to_vec());
                }
            }
            Op::ConcatChannels { parts } => {
                let shape = node.value.shape();
                let (batch, plane) = (shape[0], shape[2] * shape[3]);
                let mut offset = 0;
                let total = shape[1] * plane;
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).shape()[1] * plane).collect();
                for (&p, &width) in parts.iter().zip(&widths) {
                    if needs(p) {
                        let mut gp = Vec::with_capacity(batch * width);
                        for b in 0..batch {
                            gp.extend_from_slice(&gyd[b * total + offset..][..width]);
                        }
                        accumulate(&mut grads[p.0], self.value(p).shape(), gp);
                    }
                    offset += width;
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = gyd[0] * T::lit(2.0) / T::from_usize(p.len()).unwrap();
                let diff: Vec<T> = p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect();
                if needs(*target) {
                    let neg = diff.iter().map(|&d| -d).collect();
                    accumulate(&mut grads[target.0], self.value(*target).shape(), neg);
                }
                if needs(*pred) {
                    accumulate(&mut grads[pred.0], self.value(*pred).shape(), diff);
                }
            }
            Op::Bce { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let eps = T::lit(BCE_EPS);
                let scale = gyd[0] / T::from_usize(p.len()).unwrap();
                if needs(*pred) {
                    let gp = p
                        .iter()
                        .zip(t)
                        .map(|(&pv, &y)| {
                            if pv < eps || pv > T::one() - eps {
                                T::zero()
                            } else {
                                scale * ((T::one() - y) / (T::one() - pv) - y / pv)
                            }
                        })
                        .collect();
                    accumulate(&mut grads[pred.0], self.value(*pred).shape(), gp);
                }
                // Targets are binary labels; they carry no useful gradient.
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    if needs(v) {
                        let g = gyd.iter().map(|&d| d * w).collect();
                        accumulate(&mut grads[v.0], self.value(v).shape(), g);
                    }
                }
            }
        }
    }
}

fn channel_sums<T: Scalar>(data: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for (i, chunk) in data.chunks(plane).enumerate() {
        out[i % channels] = out[i % channels] + chunk.iter().copied().sum::<T>();
    }
    out
}
