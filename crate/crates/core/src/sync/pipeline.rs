//! Capture directory to training dataset: synchronization, then metric
//! depth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::model::{DepthRange, DepthUnit, RgbdFrame};
use crate::pose::{relative_from_absolute, PoseBounds, RelativePose};
use crate::scene::BOUNDS_MARGIN_M;

use super::capture::CaptureDir;
use super::flow::{flow_magnitudes, GrayImage};
use super::scale::{apply_scaling, find_scale, ScaleEstimate};
use super::{synchronize_dataset, SyncResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncOptions {
    pub block: usize,
    pub search: usize,
    pub max_offset: usize,
    /// Restricts the frames that score each lag.
    pub range: Option<(usize, usize)>,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            block: 8,
            search: 4,
            max_offset: 30,
            range: None,
        }
    }
}

fn gather_range(values: &[Vec<f64>], unit: DepthUnit) -> Result<DepthRange> {
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    DepthRange::new(lo, hi, unit)
}

fn write_frames(
    capture: &CaptureDir,
    out: &Path,
    mut manifest: DatasetManifest,
    frames: &[(usize, crate::pose::Pose)],
    depths: &[Vec<f64>],
) -> Result<Dataset> {
    let r = capture.meta.resolution;
    manifest.frames.clear();
    let range = manifest.depth_range;
    let mut ds = Dataset::create(out, manifest)?;
    for ((i, pose), depth) in frames.iter().zip(depths) {
        let rgb = capture.read_rgb(*i)?;
        let d: Vec<f32> = depth.iter().map(|&z| range.normalize(z).clamp(-1.0, 1.0) as f32).collect();
        let frame = RgbdFrame::from_planes(r, r, &rgb, &d)?;
        ds.write_frame(*i as f64 / capture.meta.fps, *pose, &frame)?;
    }
    ds.save_manifest()?;
    Ok(ds)
}

/// Aligns the capture's GPS log with its video and writes the overlapping
/// frames as a dataset. Depth is `1 / disparity` in unscaled units; frame
/// timestamps are video time.
pub fn sync_capture(capture: &CaptureDir, out: impl AsRef<Path>, name: &str, opts: &SyncOptions) -> Result<(Dataset, SyncResult)> {
    let n = capture.meta.frames;
    let gray = (0..n).map(|i| capture.read_gray(i)).collect::<Result<Vec<GrayImage>>>()?;
    let mags = flow_magnitudes(&gray, opts.block, opts.search)?;
    let gps = capture.read_gps()?;
    let sync = synchronize_dataset(n, capture.meta.fps, &gps, &mags, opts.max_offset, opts.range)?;
    log::info!(
        "sync offset {} (peak {:.3}), frames {}..={}",
        sync.offset,
        sync.peak,
        sync.start,
        sync.end
    );
    let depths = sync
        .pairs
        .iter()
        .map(|(i, _)| apply_scaling(&capture.read_disparity(*i)?, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let bounds = PoseBounds::from_poses(sync.pairs.iter().map(|p| &p.1), BOUNDS_MARGIN_M)?;
    let range = gather_range(&depths, DepthUnit::Unscaled)?;
    let manifest = DatasetManifest::new(name, capture.meta.resolution, bounds, range);
    let ds = write_frames(capture, out.as_ref(), manifest, &sync.pairs, &depths)?;
    Ok((ds, sync))
}

/// Video frame index of each dataset entry, recovered from its timestamp.
fn video_indices(capture: &CaptureDir, ds: &Dataset) -> Result<Vec<usize>> {
    ds.manifest
        .frames
        .iter()
        .map(|e| {
            let i = (e.timestamp_s * capture.meta.fps).round();
            if i < 0.0 || i as usize >= capture.meta.frames {
                return Err(Error::Frame {
                    index: e.index,
                    message: format!("timestamp {} s lies outside the video", e.timestamp_s),
                });
            }
            Ok(i as usize)
        })
        .collect()
}

/// Recovers metric scale by comparing the capture's unscaled relative poses
/// with those of the synchronized GPS poses, then writes a copy of `ds` with
/// depth in meters. With `per_frame`, each frame uses the scale of the motion
/// leaving it (the last frame reuses the previous one); otherwise all frames
/// use the global scale.
pub fn scale_depth(
    capture: &CaptureDir,
    ds: &Dataset,
    out: impl AsRef<Path>,
    name: &str,
    per_frame: bool,
) -> Result<(Dataset, ScaleEstimate)> {
    if ds.len() < 2 {
        return Err(Error::Validation("scale recovery needs at least 2 frames".into()));
    }
    let idx = video_indices(capture, ds)?;
    let rel = capture.read_relposes()?;
    let frames = &ds.manifest.frames;
    let mut unscaled = Vec::with_capacity(ds.len() - 1);
    let mut scaled = Vec::with_capacity(ds.len() - 1);
    for j in 0..ds.len() - 1 {
        let (a, b) = (idx[j], idx[j + 1]);
        if b <= a {
            return Err(Error::Validation(format!("dataset frames {j} and {} are not in video order", j + 1)));
        }
        let chain = rel[a..b]
            .iter()
            .fold(RelativePose::identity(false), |acc, r| acc.then(r));
        unscaled.push(chain);
        scaled.push(relative_from_absolute(&frames[j].pose, &frames[j + 1].pose));
    }
    let est = find_scale(&unscaled, &scaled)?;
    log::info!("global scale {:.6}", est.global);
    let depths = (0..ds.len())
        .map(|j| {
            let s = if per_frame { est.per_frame[j.min(est.per_frame.len() - 1)] } else { est.global };
            apply_scaling(&capture.read_disparity(idx[j])?, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = ds.manifest.clone();
    manifest.name = name.to_string();
    manifest.depth_range = gather_range(&depths, DepthUnit::Meters)?;
    let pairs: Vec<_> = idx.iter().zip(frames).map(|(&i, e)| (i, e.pose)).collect();
    let out_ds = write_frames(capture, out.as_ref(), manifest, &pairs, &depths)?;
    Ok((out_ds, est))
}
