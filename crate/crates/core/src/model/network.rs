//! Generator graph construction.
//!
//! Base: `dense -> reshape [C0, s, s] -> BN -> relu`, then one
//! `conv_transpose(k4, s2, p1) -> BN -> relu` stage per resolution doubling,
//! then a `conv_transpose(k3, s1, p1)` RGBD head with tanh.
//!
//! Slice adds a bottleneck of `conv(k3, s1, p1) -> BN -> relu` layers at full
//! resolution before the head. The slice head (conv k3 + sigmoid) reads the
//! penultimate bottleneck output; its maps are concatenated to that output and
//! fed through the last bottleneck layer.

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Activation, BatchNormMode, Graph, RunningStats, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Zero-mean normal with standard deviation 0.02.
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormSpec {
    pub name: String,
    pub channels: usize,
}

/// Ordered parameter and batch-norm inventory of a configuration. The graph
/// builder consumes parameters in exactly this order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub params: Vec<ParamSpec>,
    pub batch_norms: Vec<BatchNormSpec>,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut l = Layout {
            params: Vec::new(),
            batch_norms: Vec::new(),
        };
        let s0 = config.initial_size;
        let c0 = config.initial_channels;
        l.param("dense.weight", vec![config.input_mode.input_dim(), c0 * s0 * s0], Init::Normal);
        l.param("dense.bias", vec![c0 * s0 * s0], Init::Zeros);
        l.batch_norm("input.bn", c0);
        let mut c_in = c0;
        for (k, &c_out) in config.stage_channels.iter().enumerate() {
            l.param(&format!("up{k}.weight"), vec![c_in, c_out, 4, 4], Init::Normal);
            l.batch_norm(&format!("up{k}.bn"), c_out);
            c_in = c_out;
        }
        let feat = config.feature_channels();
        if config.is_slice() {
            for j in 0..config.bottleneck_depth - 1 {
                l.param(&format!("bottleneck{j}.weight"), vec![feat, feat, 3, 3], Init::Normal);
                l.batch_norm(&format!("bottleneck{j}.bn"), feat);
            }
            l.param("slice_head.weight", vec![config.slices, feat, 3, 3], Init::Normal);
            l.param("slice_head.bias", vec![config.slices], Init::Zeros);
            let last = config.bottleneck_depth - 1;
            l.param(
                &format!("bottleneck{last}.weight"),
                vec![feat, feat + config.slices, 3, 3],
                Init::Normal,
            );
            l.batch_norm(&format!("bottleneck{last}.bn"), feat);
        }
        l.param("rgbd_head.weight", vec![feat, 4, 3, 3], Init::Normal);
        l.param("rgbd_head.bias", vec![4], Init::Zeros);
        Ok(l)
    }

    fn param(&mut self, name: &str, shape: Vec<usize>, init: Init) {
        self.params.push(ParamSpec {
            name: name.to_string(),
            shape,
            init,
        });
    }

    fn batch_norm(&mut self, name: &str, channels: usize) {
        self.batch_norms.push(BatchNormSpec {
            name: name.to_string(),
            channels,
        });
        self.param(&format!("{name}.gamma"), vec![channels], Init::Ones);
        self.param(&format!("{name}.beta"), vec![channels], Init::Zeros);
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

pub struct GraphOutputs {
    /// `[B, 4, H, W]`, tanh.
    pub rgbd: Var,
    /// `[B, S, H, W]`, sigmoid; Slice variant only.
    pub slices: Option<Var>,
}

struct Builder<'a, T: Scalar> {
    graph: &'a mut Graph<T>,
    params: std::slice::Iter<'a, Var>,
    stats: std::slice::IterMut<'a, RunningStats<T>>,
    mode: BatchNormMode,
}

impl<T: Scalar> Builder<'_, T> {
    fn next(&mut self) -> Result<Var> {
        self.params
            .next()
            .copied()
            .ok_or_else(|| Error::Build("parameter list shorter than layout".into()))
    }

    fn bn_relu(&mut self, x: Var) -> Result<Var> {
        let gamma = self.next()?;
        let beta = self.next()?;
        let stats = self
            .stats
            .next()
            .ok_or_else(|| Error::Build("running stats shorter than layout".into()))?;
        let y = self.graph.batch_norm(x, gamma, beta, stats, self.mode)?;
        self.graph.activation(y, Activation::Relu)
    }

    fn conv_bn_relu(&mut self, x: Var) -> Result<Var> {
        let w = self.next()?;
        let y = self.graph.conv2d(x, w, None, 1, 1)?;
        self.bn_relu(y)
    }
}

/// Records the generator forward pass for `input: [B, input_dim]`. `params` and
/// `stats` follow [`Layout`] order.
pub fn build_forward<T: Scalar>(
    config: &ModelConfig,
    graph: &mut Graph<T>,
    params: &[Var],
    stats: &mut [RunningStats<T>],
    input: Var,
    mode: BatchNormMode,
) -> Result<GraphOutputs> {
    let in_shape = graph.value(input).shape().to_vec();
    if in_shape.len() != 2 || in_shape[1] != config.input_mode.input_dim() {
        return Err(Error::Dimension(format!(
            "input {in_shape:?} does not match {} ({} values)",
            config.input_mode.as_str(),
            config.input_mode.input_dim()
        )));
    }
    let batch = in_shape[0];
    let mut b = Builder {
        graph,
        params: params.iter(),
        stats: stats.iter_mut(),
        mode,
    };
    let (w, bias) = (b.next()?, b.next()?);
    let x = b.graph.dense(input, w, Some(bias))?;
    let s0 = config.initial_size;
    let x = b.graph.reshape(x, &[batch, config.initial_channels, s0, s0])?;
    let mut x = b.bn_relu(x)?;
    for _ in &config.stage_channels {
        let w = b.next()?;
        let y = b.graph.conv_transpose2d(x, w, None, 2, 1)?;
        x = b.bn_relu(y)?;
    }
    let mut slices = None;
    if config.is_slice() {
        for _ in 0..config.bottleneck_depth - 1 {
            x = b.conv_bn_relu(x)?;
        }
        let (sw, sb) = (b.next()?, b.next()?);
        let logits = b.graph.conv2d(x, sw, Some(sb), 1, 1)?;
        let s = b.graph.activation(logits, Activation::Sigmoid)?;
        slices = Some(s);
        let cat = b.graph.concat_channels(&[x, s])?;
        x = b.conv_bn_relu(cat)?;
    }
    let (hw, hb) = (b.next()?, b.next()?);
    let head = b.graph.conv_transpose2d(x, hw, Some(hb), 1, 1)?;
    let rgbd = b.graph.activation(head, Activation::Tanh)?;
    if b.params.next().is_some() {
        return Err(Error::Build("parameter list longer than layout".into()));
    }
    Ok(GraphOutputs { rgbd, slices })
}

/// `mse(rgbd) + slice_weight * bce(slices)`; the BCE term is omitted for the
/// Base variant. BCE over the whole stack equals the mean of per-slice BCEs.
pub fn build_total_loss<T: Scalar>(
    graph: &mut Graph<T>,
    pred_rgbd: Var,
    gt_rgbd: Var,
    slices: Option<(Var, Var)>,
    slice_weight: f64,
) -> Result<Var> {
    let mse = graph.mse_loss(pred_rgbd, gt_rgbd)?;
    match slices {
        Some((pred, gt)) => {
            let bce = graph.bce_loss(pred, gt)?;
            graph.weighted_sum(&[(mse, T::one()), (bce, T::lit(slice_weight))])
        }
        None => Ok(mse),
    }
}
