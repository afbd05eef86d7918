//! Metric scale from paired unscaled (monocular) and scaled (GPS) relative
//! motions, and disparity-to-depth conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::RelativePose;

/// Minimum unscaled translation norm for a frame to count.
pub const MIN_UNSCALED_TRANSLATION: f64 = 1e-6;
/// Minimum scaled translation norm (meters) for a frame to count.
pub const MIN_SCALED_TRANSLATION_M: f64 = 0.01;
/// Disparities are clamped from below to this value before inversion.
pub const MIN_DISPARITY: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub per_frame: Vec<f64>,
    /// Whether each frame passed the motion thresholds.
    pub measured: Vec<bool>,
    pub global: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-frame scale `|t_scaled| / |t_unscaled|`. Frames with too little motion
/// take the median of the scales measured before them (or the global median
/// when none precede them). The global scale is the median of measured scales.
pub fn find_scale(unscaled: &[RelativePose], scaled: &[RelativePose]) -> Result<ScaleEstimate> {
    if unscaled.len() != scaled.len() {
        return Err(Error::Dimension(format!(
            "{} unscaled vs {} scaled relative poses",
            unscaled.len(),
            scaled.len()
        )));
    }
    let raw: Vec<Option<f64>> = unscaled
        .iter()
        .zip(scaled)
        .map(|(u, s)| {
            let (nu, ns) = (u.translation.norm(), s.translation.norm());
            (nu > MIN_UNSCALED_TRANSLATION && ns > MIN_SCALED_TRANSLATION_M && (ns / nu).is_finite())
                .then(|| ns / nu)
        })
        .collect();
    let mut measured: Vec<f64> = raw.iter().flatten().copied().collect();
    if measured.is_empty() {
        return Err(Error::DegenerateMotion);
    }
    let global = median(&mut measured);
    let mut seen = Vec::new();
    let per_frame = raw
        .iter()
        .map(|r| match r {
            Some(s) => {
                seen.push(*s);
                *s
            }
            None if seen.is_empty() => global,
            None => median(&mut seen.clone()),
        })
        .collect();
    Ok(ScaleEstimate {
        per_frame,
        measured: raw.iter().map(Option::is_some).collect(),
        global,
    })
}

/// `depth = scale / max(disparity, 1e-6)`.
pub fn apply_scaling<T: Copy + Into<f64>>(disparity: &[T], scale: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Validation(format!("scale must be positive, got {scale}")));
    }
    Ok(disparity
        .iter()
        .map(|&d| scale / d.into().max(MIN_DISPARITY))
        .collect())
}
