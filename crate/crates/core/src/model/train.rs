use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Metrics};
use super::frame::RgbdFrame;
use super::network::{build_forward, build_total_loss};
use super::slices::slice_depth;
use super::Model;
use crate::error::{Error, Result};
use crate::numerics::{AdamW, AdamWConfig, BatchNormMode, Graph, RunningStats, Tensor};
use crate::pose::Pose;

/// Translation tolerance (m) and rotation tolerance (rad) under which two
/// poses are considered the same.
pub const DUPLICATE_TRANSLATION_TOL: f64 = 1e-6;
pub const DUPLICATE_ANGLE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pose: Pose,
    pub frame: RgbdFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub optimizer: AdamWConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            seed: 0,
            max_steps: None,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the step losses of this epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters were kept, when a validation set was given.
    pub best_epoch: Option<usize>,
    pub train_metrics: Metrics,
    pub val_metrics: Option<Metrics>,
    pub wall_time_s: f64,
}

/// Fails when two samples share a pose but carry different frames.
pub fn check_consistency(samples: &[Sample]) -> Result<()> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].pose.translation[0].total_cmp(&samples[b].pose.translation[0]));
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            let (pa, pb) = (&samples[a].pose, &samples[b].pose);
            if pb.translation[0] - pa.translation[0] > DUPLICATE_TRANSLATION_TOL {
                break;
            }
            if pa.approx_eq(pb, DUPLICATE_TRANSLATION_TOL, DUPLICATE_ANGLE_TOL)
                && samples[a].frame != samples[b].frame
            {
                return Err(Error::DatasetConsistency(format!(
                    "samples {} and {} share a pose but differ in content",
                    a.min(b),
                    a.max(b)
                )));
            }
        }
    }
    Ok(())
}

/// Per-sample network inputs and targets in NCHW order.
struct Prepared {
    inputs: Vec<Vec<f32>>,
    rgbd: Vec<Vec<f32>>,
    slices: Vec<Vec<f32>>,
    input_dim: usize,
    res: usize,
    n_slices: usize,
}

impl Prepared {
    fn new(model: &Model, samples: &[Sample]) -> Result<Self> {
        let cfg = &model.config;
        let res = cfg.output_resolution;
        let plane = res * res;
        let mut p = Prepared {
            inputs: Vec::new(),
            rgbd: Vec::new(),
            slices: Vec::new(),
            input_dim: cfg.input_mode.input_dim(),
            res,
            n_slices: cfg.slices,
        };
        for (i, s) in samples.iter().enumerate() {
            if s.frame.height() != res || s.frame.width() != res {
                return Err(Error::Dimension(format!(
                    "sample {i} is {}x{}, model outputs {res}x{res}",
                    s.frame.height(),
                    s.frame.width()
                )));
            }
            p.inputs.push(model.encode(&s.pose)?.values.iter().map(|&v| v as f32).collect());
            let mut chw = vec![0.0f32; 4 * plane];
            for (j, px) in s.frame.data().chunks_exact(4).enumerate() {
                for c in 0..4 {
                    chw[c * plane + j] = px[c];
                }
            }
            p.rgbd.push(chw);
            if cfg.is_slice() {
                let stack = slice_depth(&s.frame.depth_plane(), res, res, cfg.slices)?;
                let mut chw = vec![0.0f32; cfg.slices * plane];
                for (j, px) in stack.data().chunks_exact(cfg.slices).enumerate() {
                    for (c, &v) in px.iter().enumerate() {
                        chw[c * plane + j] = v;
                    }
                }
                p.slices.push(chw);
            }
        }
        Ok(p)
    }

    fn gather(rows: &[Vec<f32>], batch: &[usize], shape: Vec<usize>) -> Result<Tensor<f32>> {
        Tensor::new(shape, batch.iter().flat_map(|&i| rows[i].iter().copied()).collect())
    }

    fn input(&self, batch: &[usize]) -> Result<Tensor<f32>> {
        Self::gather(&self.inputs, batch, vec![batch.len(), self.input_dim])
    }

    fn rgbd(&self, batch: &[usize]) -> Result<Tensor<f32>> {
        Self::gather(&self.rgbd, batch, vec![batch.len(), 4, self.res, self.res])
    }

    fn slices(&self, batch: &[usize]) -> Result<Tensor<f32>> {
        Self::gather(&self.slices, batch, vec![batch.len(), self.n_slices, self.res, self.res])
    }
}

/// Consecutive batches of `order`; a trailing batch of one sample is merged
/// into the previous batch because training-mode batch norm needs two.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    batches
}

fn train_step(model: &mut Model, opt: &mut AdamW<f32>, data: &Prepared, batch: &[usize]) -> Result<f64> {
    let mut g = Graph::<f32>::new();
    let vars = model
        .params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let input = g.constant(data.input(batch)?)?;
    let out = build_forward(&model.config, &mut g, &vars, &mut model.stats, input, BatchNormMode::Train)?;
    let gt = g.constant(data.rgbd(batch)?)?;
    let slices = match out.slices {
        Some(s) => Some((s, g.constant(data.slices(batch)?)?)),
        None => None,
    };
    let loss = build_total_loss(&mut g, out.rgbd, gt, slices, model.config.slice_weight)?;
    let value = g.value(loss).item() as f64;
    let grads = g.backward(loss)?;
    let grad_refs: Vec<Option<&Tensor<f32>>> = vars.iter().map(|&v| grads.get(v)).collect();
    let mut params: Vec<&mut Tensor<f32>> = model.params.iter_mut().collect();
    opt.step(&mut params, &grad_refs)?;
    Ok(value)
}

/// Mean total loss in inference mode, weighted by sample count.
fn inference_loss(model: &Model, data: &Prepared) -> Result<f64> {
    let n = data.inputs.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    for chunk in idx.chunks(16) {
        let mut g = Graph::<f32>::new();
        let input = g.constant(data.input(chunk)?)?;
        let vars = model
            .params
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = model.stats.clone();
        let out = build_forward(&model.config, &mut g, &vars, &mut stats, input, BatchNormMode::Inference)?;
        let gt = g.constant(data.rgbd(chunk)?)?;
        let slices = match out.slices {
            Some(s) => Some((s, g.constant(data.slices(chunk)?)?)),
            None => None,
        };
        let loss = build_total_loss(&mut g, out.rgbd, gt, slices, model.config.slice_weight)?;
        sum += g.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok(sum / n as f64)
}

/// Trains `model` in place with AdamW. With a validation set, the parameters
/// of the epoch with the lowest validation loss are kept; otherwise the final
/// ones are.
/// Validation loss, epoch, parameters and running stats of the best epoch.
type Snapshot = (f64, usize, Vec<Tensor<f32>>, Vec<RunningStats<f32>>);

pub fn train(model: &mut Model, train_set: &[Sample], val_set: Option<&[Sample]>, opts: &TrainOptions) -> Result<TrainReport> {
    train_with(model, train_set, val_set, opts, |_, _| Ok(ControlFlow::Continue(())))
}

/// [`train`] with a hook called after every epoch; returning
/// `ControlFlow::Break` ends training early.
pub fn train_with<F>(
    model: &mut Model,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    opts: &TrainOptions,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(&Model, &EpochRecord) -> Result<ControlFlow<()>>,
{
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::Validation("epochs and batch size must be positive".into()));
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let all: Vec<Sample> = train_set.iter().chain(val_set.unwrap_or(&[])).cloned().collect();
    check_consistency(&all)?;

    let start = Instant::now();
    let data = Prepared::new(model, train_set)?;
    let val_data = val_set.map(|v| Prepared::new(model, v)).transpose()?;
    let mut opt = AdamW::<f32>::new(opts.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step_losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<Snapshot> = None;
    let max_steps = opts.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..opts.epochs {
        if step_losses.len() >= max_steps {
            break;
        }
        order.shuffle(&mut rng);
        let first_step = step_losses.len();
        for batch in make_batches(&order, opts.batch_size) {
            if step_losses.len() >= max_steps {
                break;
            }
            let loss = train_step(model, &mut opt, &data, &batch)?;
            step_losses.push(loss);
        }
        let epoch_losses = &step_losses[first_step..];
        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64;
        let val_loss = val_data.as_ref().map(|v| inference_loss(model, v)).transpose()?;
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|b| vl < b.0) {
                best = Some((vl, epoch, model.params.clone(), model.stats.clone()));
            }
        }
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}{}",
            val_loss.map(|v| format!(", val loss {v:.6}")).unwrap_or_default()
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        let record = epochs.last().expect("just pushed");
        if on_epoch(model, record)?.is_break() || step_losses.len() >= max_steps {
            break 'epochs;
        }
    }

    let best_epoch = best.map(|(_, epoch, params, stats)| {
        model.set_state(params, stats);
        epoch
    });
    let train_metrics = evaluate(model, train_set)?;
    let val_metrics = val_set.map(|v| evaluate(model, v)).transpose()?;
    Ok(TrainReport {
        seed: opts.seed,
        steps: step_losses.len(),
        epochs,
        step_losses,
        best_epoch,
        train_metrics,
        val_metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
