//! Pose-to-RGBD generators (Base and Slice variants), their losses, training
//! loop, metrics, benchmarking and checkpoint format.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod frame;
pub mod network;
pub mod slices;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use bench::{bench, BenchRow};
pub use config::ModelConfig;
pub use eval::{compare_frames, evaluate, Metrics};
pub use frame::{DepthRange, DepthSliceStack, DepthUnit, RgbdFrame};
pub use network::{Init, Layout};
pub use slices::{confidence_map, reconstruct_depth, slice_depth, slice_index};
pub use train::{train, train_with, EpochRecord, Sample, TrainOptions, TrainReport};

use crate::error::{Error, Result};
use crate::numerics::{BatchNormMode, Graph, RunningStats, Tensor};
use crate::pose::{normalize_pose, EncodedPose, Pose, PoseBounds};

pub const INIT_STD: f64 = 0.02;

/// Generator output for one pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub rgbd: RgbdFrame,
    pub slices: Option<DepthSliceStack>,
}

/// A generator with its parameters and the normalization it was trained
/// under. Immutable during inference, so it can serve concurrent requests.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    bounds: PoseBounds,
    depth_range: DepthRange,
    layout: Layout,
    params: Vec<Tensor<f32>>,
    stats: Vec<RunningStats<f32>>,
}

impl Model {
    pub fn build(config: ModelConfig, bounds: PoseBounds, depth_range: DepthRange, seed: u64) -> Result<Self> {
        bounds.validate()?;
        depth_range.validate()?;
        let layout = Layout::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid std");
        let params = layout
            .params
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Tensor::new(spec.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = layout.batch_norms.iter().map(|b| RunningStats::new(b.channels)).collect();
        Ok(Self {
            config,
            bounds,
            depth_range,
            layout,
            params,
            stats,
        })
    }

    pub fn from_parts(
        config: ModelConfig,
        bounds: PoseBounds,
        depth_range: DepthRange,
        params: Vec<Tensor<f32>>,
        stats: Vec<RunningStats<f32>>,
    ) -> Result<Self> {
        bounds.validate()?;
        depth_range.validate()?;
        let layout = Layout::new(&config)?;
        if params.len() != layout.params.len() || stats.len() != layout.batch_norms.len() {
            return Err(Error::Build(format!(
                "expected {} parameters and {} batch norms, got {} and {}",
                layout.params.len(),
                layout.batch_norms.len(),
                params.len(),
                stats.len()
            )));
        }
        for (spec, p) in layout.params.iter().zip(&params) {
            if spec.shape != p.shape() {
                return Err(Error::Build(format!(
                    "{}: shape {:?}, layout expects {:?}",
                    spec.name,
                    p.shape(),
                    spec.shape
                )));
            }
        }
        for (spec, s) in layout.batch_norms.iter().zip(&stats) {
            if s.channels() != spec.channels || s.var.len() != spec.channels {
                return Err(Error::Build(format!("{}: running stats size mismatch", spec.name)));
            }
        }
        Ok(Self {
            config,
            bounds,
            depth_range,
            layout,
            params,
            stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bounds(&self) -> &PoseBounds {
        &self.bounds
    }

    pub fn depth_range(&self) -> &DepthRange {
        &self.depth_range
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<f32>] {
        &self.stats
    }

    pub(crate) fn set_state(&mut self, params: Vec<Tensor<f32>>, stats: Vec<RunningStats<f32>>) {
        self.params = params;
        self.stats = stats;
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// SHA-256 over parameter and running-stat bytes.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        for s in &self.stats {
            for v in s.mean.iter().chain(&s.var) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, pose: &Pose) -> Result<EncodedPose> {
        normalize_pose(pose, &self.bounds, self.config.input_mode)
    }

    pub(crate) fn input_tensor<T: crate::numerics::Scalar>(&self, encoded: &[&EncodedPose]) -> Result<Tensor<T>> {
        let dim = self.config.input_mode.input_dim();
        let mut data = Vec::with_capacity(encoded.len() * dim);
        for e in encoded {
            if e.values.len() != dim || e.mode != self.config.input_mode {
                return Err(Error::Dimension(format!(
                    "encoded pose has {} values ({}), model expects {dim} ({})",
                    e.values.len(),
                    e.mode.as_str(),
                    self.config.input_mode.as_str()
                )));
            }
            data.extend(e.values.iter().map(|&v| T::lit(v)));
        }
        Tensor::new([encoded.len(), dim], data)
    }

    pub fn forward(&self, encoded: &EncodedPose) -> Result<Prediction> {
        Ok(self.forward_batch(&[encoded])?.remove(0))
    }

    /// Inference with running batch-norm statistics.
    pub fn forward_batch(&self, encoded: &[&EncodedPose]) -> Result<Vec<Prediction>> {
        let mut graph = Graph::<f32>::new();
        let (rgbd, slices) = self.record_inference(&mut graph, encoded)?;
        let frames = frame::tensor_to_frames(graph.value(rgbd))?;
        let stacks = match slices {
            Some(s) => DepthSliceStack::from_tensor(graph.value(s))?.into_iter().map(Some).collect(),
            None => vec![None; frames.len()],
        };
        Ok(frames
            .into_iter()
            .zip(stacks)
            .map(|(rgbd, slices)| Prediction { rgbd, slices })
            .collect())
    }

    pub(crate) fn record_inference(
        &self,
        graph: &mut Graph<f32>,
        encoded: &[&EncodedPose],
    ) -> Result<(crate::numerics::Var, Option<crate::numerics::Var>)> {
        let input = graph.constant(self.input_tensor(encoded)?)?;
        let vars = self
            .params
            .iter()
            .map(|p| graph.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = self.stats.clone();
        let out = network::build_forward(&self.config, graph, &vars, &mut stats, input, BatchNormMode::Inference)?;
        Ok((out.rgbd, out.slices))
    }
}

/// `mse + slice_weight * bce` evaluated on frame values, in 64-bit.
pub fn total_loss(
    pred_rgbd: &[&RgbdFrame],
    gt_rgbd: &[&RgbdFrame],
    slices: Option<(&[&DepthSliceStack], &[&DepthSliceStack])>,
    slice_weight: f64,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let p = g.constant(frame::frames_to_tensor(pred_rgbd)?)?;
    let t = g.constant(frame::frames_to_tensor(gt_rgbd)?)?;
    let s = match slices {
        Some((ps, gs)) => Some((
            g.constant(DepthSliceStack::to_tensor(ps)?)?,
            g.constant(DepthSliceStack::to_tensor(gs)?)?,
        )),
        None => None,
    };
    let loss = network::build_total_loss(&mut g, p, t, s, slice_weight)?;
    Ok(g.value(loss).item())
}
