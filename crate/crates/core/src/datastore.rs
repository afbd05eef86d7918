//! Dataset directory:
//!
//! ```text
//! manifest.json      bounds, depth range and one entry per frame
//! rgb/%06d.png       8-bit RGB
//! depth/%06d.f32     u32 height, u32 width, then little-endian f32 values
//! ```
//!
//! Depth files hold normalized `[-1, 1]` values; the manifest depth range maps
//! them back to meters (or unscaled units).

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::train::{DUPLICATE_ANGLE_TOL, DUPLICATE_TRANSLATION_TOL};
use crate::model::{DepthRange, RgbdFrame, Sample};
use crate::pose::{Pose, PoseBounds};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp_s: f64,
    pub pose: Pose,
    pub rgb_path: String,
    pub depth_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub resolution: usize,
    pub bounds: PoseBounds,
    pub depth_range: DepthRange,
    /// Depth given to pixels that saw no geometry, when any did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_plane_m: Option<f64>,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn new(name: &str, resolution: usize, bounds: PoseBounds, depth_range: DepthRange) -> Self {
        Self {
            name: name.to_string(),
            resolution,
            bounds,
            depth_range,
            far_plane_m: None,
            frames: Vec::new(),
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        self.bounds.validate()?;
        self.depth_range.validate()?;
        if self.resolution == 0 {
            return Err(Error::Validation("manifest resolution must be positive".into()));
        }
        if self.frames.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::Validation("manifest entries are not sorted by index".into()));
        }
        Ok(())
    }
}

pub fn write_depth_file(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Dimension(format!(
            "depth file {height}x{width} needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let mut buf = Vec::with_capacity(8 + 4 * values.len());
    for d in [height, width] {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns `(height, width, values)`.
pub fn read_depth_file(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 8 {
        return Err(Error::Format(format!("{}: missing header", path.display())));
    }
    let h = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    let w = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
    let body = &buf[8..];
    if body.len() != h * w * 4 {
        return Err(Error::Format(format!(
            "{}: header says {h}x{w} but body has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((h, w, values))
}

pub fn write_rgb_png(path: &Path, size: usize, rgb: Vec<u8>) -> Result<()> {
    let dim = u32::try_from(size).map_err(|_| Error::Format("image too large".into()))?;
    let img = image::RgbImage::from_raw(dim, dim, rgb)
        .ok_or_else(|| Error::Dimension("RGB buffer does not match image size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads an 8-bit PNG as normalized RGB, `v / 127.5 - 1`.
pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw().into_iter().map(|v| v as f32 / 127.5 - 1.0).collect()))
}

/// A dataset directory and its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Creates the directory layout; frames are added with [`Dataset::write_frame`].
    pub fn create(root: impl AsRef<Path>, manifest: DatasetManifest) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["rgb", "depth"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        manifest.check_invariants()?;
        Ok(Self { root, manifest })
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.check_invariants()?;
        Ok(Self { root, manifest })
    }

    /// Wraps an in-memory manifest whose paths are relative to `root`.
    pub fn with_manifest(root: impl AsRef<Path>, manifest: DatasetManifest) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
            manifest,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn save_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Appends a frame with the next index. RGB is quantized to 8 bits; depth
    /// is stored exactly.
    pub fn write_frame(&mut self, timestamp_s: f64, pose: Pose, frame: &RgbdFrame) -> Result<usize> {
        let res = self.manifest.resolution;
        if frame.height() != res || frame.width() != res {
            return Err(Error::Dimension(format!(
                "frame {}x{} does not match dataset resolution {res}",
                frame.height(),
                frame.width()
            )));
        }
        let index = self.manifest.frames.last().map_or(0, |f| f.index + 1);
        let entry = FrameEntry {
            index,
            timestamp_s,
            pose,
            rgb_path: format!("rgb/{index:06}.png"),
            depth_path: format!("depth/{index:06}.f32"),
        };
        write_rgb_png(&self.root.join(&entry.rgb_path), res, frame.rgb_u8())?;
        write_depth_file(&self.root.join(&entry.depth_path), res, res, &frame.depth_plane())?;
        self.manifest.frames.push(entry);
        Ok(index)
    }

    /// Frame at position `position` of the manifest.
    pub fn read_frame(&self, position: usize) -> Result<(RgbdFrame, Pose)> {
        let entry = self.manifest.frames.get(position).ok_or_else(|| Error::Frame {
            index: position,
            message: format!("out of range, dataset has {} frames", self.len()),
        })?;
        let wrap = |e: Error| Error::Frame {
            index: entry.index,
            message: e.to_string(),
        };
        let (h, w, rgb) = read_rgb_png(&self.root.join(&entry.rgb_path)).map_err(wrap)?;
        let (dh, dw, depth) = read_depth_file(&self.root.join(&entry.depth_path)).map_err(wrap)?;
        if (h, w) != (dh, dw) {
            return Err(wrap(Error::Format(format!("RGB is {h}x{w} but depth is {dh}x{dw}"))));
        }
        let frame = RgbdFrame::from_planes(h, w, &rgb, &depth).map_err(wrap)?;
        Ok((frame, entry.pose))
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        (0..self.len())
            .map(|i| self.read_frame(i).map(|(frame, pose)| Sample { pose, frame }))
            .collect()
    }

    /// SHA-256 over the manifest and every referenced file, in manifest order.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest)?);
        for e in &self.manifest.frames {
            for rel in [&e.rgb_path, &e.depth_path] {
                let path = self.root.join(rel);
                h.update(std::fs::read(&path).map_err(|err| Error::io(&path, err))?);
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Index pairs with the same pose but different frame content.
    pub duplicates: Vec<(usize, usize)>,
    /// Indices of frames whose translation lies outside the bounds.
    pub out_of_bounds: Vec<usize>,
    /// Frames that could not be read, with the error.
    pub unreadable: Vec<(usize, String)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.duplicates.is_empty() && self.out_of_bounds.is_empty() && self.unreadable.is_empty()
    }
}

/// Report-only consistency check of a dataset.
pub fn validate(ds: &Dataset) -> ValidationReport {
    let m = &ds.manifest;
    let mut report = ValidationReport::default();
    for e in &m.frames {
        if !m.bounds.contains(&e.pose.translation) {
            report.out_of_bounds.push(e.index);
        }
    }
    let mut order: Vec<usize> = (0..m.frames.len()).collect();
    order.sort_by(|&a, &b| m.frames[a].pose.translation[0].total_cmp(&m.frames[b].pose.translation[0]));
    let mut cache: std::collections::HashMap<usize, Option<RgbdFrame>> = Default::default();
    let mut load = |pos: usize, report: &mut ValidationReport| -> Option<RgbdFrame> {
        cache
            .entry(pos)
            .or_insert_with(|| match ds.read_frame(pos) {
                Ok((f, _)) => Some(f),
                Err(e) => {
                    report.unreadable.push((m.frames[pos].index, e.to_string()));
                    None
                }
            })
            .clone()
    };
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            let (pa, pb) = (&m.frames[a].pose, &m.frames[b].pose);
            if pb.translation[0] - pa.translation[0] > DUPLICATE_TRANSLATION_TOL {
                break;
            }
            if !pa.approx_eq(pb, DUPLICATE_TRANSLATION_TOL, DUPLICATE_ANGLE_TOL) {
                continue;
            }
            let (fa, fb) = (load(a, &mut report), load(b, &mut report));
            if let (Some(fa), Some(fb)) = (fa, fb) {
                if fa != fb {
                    let (ia, ib) = (m.frames[a].index, m.frames[b].index);
                    report.duplicates.push((ia.min(ib), ia.max(ib)));
                }
            }
        }
    }
    report.duplicates.sort_unstable();
    report
}

/// Seeded shuffle, then the first `ceil(ratio * n)` frames go to the training
/// split. Both splits keep index order.
pub fn split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    let n = manifest.frames.len();
    if n < 2 {
        return Err(Error::Validation(format!("split needs at least 2 frames, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n_train = ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    let pick = |idx: &[usize], suffix: &str| DatasetManifest {
        name: format!("{}-{suffix}", manifest.name),
        frames: idx.iter().map(|&i| manifest.frames[i].clone()).collect(),
        ..manifest.clone()
    };
    Ok((pick(&train, "train"), pick(&val, "val")))
}
