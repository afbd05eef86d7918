//! Raw capture directory consumed by the synchronization pipeline:
//!
//! ```text
//! video.json          fps, frame count, resolution
//! video/%06d.png      8-bit RGB frames
//! gps.csv             timestamp_s,x,y,z[,qw,qx,qy,qz] on the GPS clock
//! disparity/%06d.f32  per-frame disparity, datastore binary format
//! relposes.f32        [frames - 1, 7] rows of unscaled frame-to-frame motion
//!                     (tx, ty, tz, qw, qx, qy, qz), datastore binary format
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::datastore::{read_depth_file, read_rgb_png, write_depth_file};
use crate::error::{Error, Result};
use crate::pose::{Quat, RelativePose};

use super::flow::GrayImage;
use super::PoseTrack;

pub const VIDEO_META: &str = "video.json";
pub const GPS_LOG: &str = "gps.csv";
pub const RELPOSES: &str = "relposes.f32";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub fps: f64,
    pub frames: usize,
    pub resolution: usize,
}

#[derive(Clone, Debug)]
pub struct CaptureDir {
    root: PathBuf,
    pub meta: VideoMeta,
}

pub fn video_path(i: usize) -> String {
    format!("video/{i:06}.png")
}

pub fn disparity_path(i: usize) -> String {
    format!("disparity/{i:06}.f32")
}

impl CaptureDir {
    /// Creates the directory skeleton and writes `video.json`.
    pub fn create(root: impl AsRef<Path>, meta: VideoMeta) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["video", "disparity"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let path = root.join(VIDEO_META);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(Self { root, meta })
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(VIDEO_META);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: VideoMeta = serde_json::from_str(&text)?;
        if !(meta.fps > 0.0) || meta.frames < 2 || meta.resolution == 0 {
            return Err(Error::Format(format!("{}: need fps > 0, >= 2 frames, resolution > 0", path.display())));
        }
        Ok(Self { root, meta })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.meta.frames {
            return Err(Error::Frame {
                index: i,
                message: format!("capture has {} frames", self.meta.frames),
            });
        }
        Ok(())
    }

    /// RGB planes in `[-1, 1]`, row-major interleaved.
    pub fn read_rgb(&self, i: usize) -> Result<Vec<f32>> {
        self.check_index(i)?;
        let (h, w, rgb) = read_rgb_png(&self.root.join(video_path(i)))?;
        let r = self.meta.resolution;
        if (h, w) != (r, r) {
            return Err(Error::Frame {
                index: i,
                message: format!("video frame is {h}x{w}, expected {r}x{r}"),
            });
        }
        Ok(rgb)
    }

    pub fn read_gray(&self, i: usize) -> Result<GrayImage> {
        let rgb = self.read_rgb(i)?;
        let r = self.meta.resolution;
        let bytes: Vec<u8> = rgb.iter().map(|v| ((v + 1.0) * 127.5).round() as u8).collect();
        GrayImage::from_rgb_u8(r, r, &bytes)
    }

    pub fn read_disparity(&self, i: usize) -> Result<Vec<f32>> {
        self.check_index(i)?;
        let (h, w, d) = read_depth_file(&self.root.join(disparity_path(i)))?;
        let r = self.meta.resolution;
        if (h, w) != (r, r) {
            return Err(Error::Frame {
                index: i,
                message: format!("disparity is {h}x{w}, expected {r}x{r}"),
            });
        }
        Ok(d)
    }

    pub fn write_disparity(&self, i: usize, values: &[f32]) -> Result<()> {
        let r = self.meta.resolution;
        write_depth_file(&self.root.join(disparity_path(i)), r, r, values)
    }

    pub fn read_gps(&self) -> Result<PoseTrack> {
        PoseTrack::read(&self.root.join(GPS_LOG))
    }

    pub fn write_gps(&self, track: &PoseTrack) -> Result<()> {
        let path = self.root.join(GPS_LOG);
        std::fs::write(&path, track.to_log()).map_err(|e| Error::io(&path, e))
    }

    /// Unscaled motion from frame `i` to frame `i + 1`, one per consecutive
    /// frame pair.
    pub fn read_relposes(&self) -> Result<Vec<RelativePose>> {
        let path = self.root.join(RELPOSES);
        let (rows, cols, v) = read_depth_file(&path)?;
        if cols != 7 || rows + 1 != self.meta.frames {
            return Err(Error::Format(format!(
                "{}: expected [{}, 7], got [{rows}, {cols}]",
                path.display(),
                self.meta.frames - 1
            )));
        }
        Ok(v.chunks_exact(7)
            .map(|r| {
                let r: Vec<f64> = r.iter().map(|&x| x as f64).collect();
                RelativePose {
                    translation: Vector3::new(r[0], r[1], r[2]),
                    rotation: Quat::new(r[3], r[4], r[5], r[6]).normalized(),
                    scaled: false,
                }
            })
            .collect())
    }

    pub fn write_relposes(&self, rel: &[RelativePose]) -> Result<()> {
        let values: Vec<f32> = rel
            .iter()
            .flat_map(|r| {
                let (t, q) = (r.translation, r.rotation);
                [t.x, t.y, t.z, q.w, q.x, q.y, q.z].map(|x| x as f32)
            })
            .collect();
        write_depth_file(&self.root.join(RELPOSES), rel.len(), 7, &values)
    }
}
