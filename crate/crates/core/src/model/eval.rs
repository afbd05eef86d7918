use serde::{Deserialize, Serialize};

use super::frame::{DepthRange, DepthUnit, RgbdFrame};
use super::train::Sample;
use super::Model;
use crate::error::{Error, Result};

/// Mean absolute RGB error on the `[0, 255]` scale and mean absolute depth
/// error in the depth range unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rgb_px_error: f64,
    pub depth_error: f64,
    pub depth_unit: DepthUnit,
    pub frames: usize,
}

pub fn compare_frames(pred: &[&RgbdFrame], gt: &[&RgbdFrame], range: &DepthRange) -> Result<Metrics> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let (mut rgb, mut depth, mut n_rgb, mut n_depth) = (0.0f64, 0.0f64, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        if (p.height(), p.width()) != (g.height(), g.width()) {
            return Err(Error::Dimension(format!(
                "prediction {}x{} vs ground truth {}x{}",
                p.height(),
                p.width(),
                g.height(),
                g.width()
            )));
        }
        for (a, b) in p.data().chunks_exact(4).zip(g.data().chunks_exact(4)) {
            for c in 0..3 {
                rgb += (a[c] as f64 - b[c] as f64).abs();
            }
            depth += (range.denormalize(a[3] as f64) - range.denormalize(b[3] as f64)).abs();
            n_rgb += 3;
            n_depth += 1;
        }
    }
    Ok(Metrics {
        rgb_px_error: rgb / n_rgb as f64 * 127.5,
        depth_error: depth / n_depth as f64,
        depth_unit: range.unit,
        frames: pred.len(),
    })
}

/// Runs inference over `samples` and compares against their frames.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Metrics> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let encoded = chunk.iter().map(|s| model.encode(&s.pose)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = encoded.iter().collect();
        preds.extend(model.forward_batch(&refs)?.into_iter().map(|p| p.rgbd));
    }
    let pred_refs: Vec<_> = preds.iter().collect();
    let gt_refs: Vec<_> = samples.iter().map(|s| &s.frame).collect();
    compare_frames(&pred_refs, &gt_refs, model.depth_range())
}
