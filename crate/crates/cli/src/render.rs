//! Single-pose rendering shared by the `render` command and the HTTP service.

use std::time::Instant;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use p2rgbd::model::{confidence_map, Model};
use p2rgbd::pose::{Pose, Quat};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Quaternions further than this from unit norm are rejected.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;
/// Slice activation above which a slice claims a pixel.
pub const CONFIDENCE_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    /// Meters.
    pub translation: [f64; 3],
    /// `[w, a, b, c]`.
    pub quaternion: [f64; 4],
}

impl RenderRequest {
    /// Parses `x,y,z,qw,qx,qy,qz`.
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let v = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ServiceError::BadRequest(format!("pose {text:?}: {e}")))?;
        if v.len() != 7 {
            return Err(ServiceError::BadRequest(format!("pose needs 7 values x,y,z,qw,qx,qy,qz, got {}", v.len())));
        }
        Ok(Self {
            translation: [v[0], v[1], v[2]],
            quaternion: [v[3], v[4], v[5], v[6]],
        })
    }

    /// Checks finiteness and the unit-norm tolerance, then renormalizes.
    pub fn to_pose(&self) -> Result<Pose, ServiceError> {
        if !self.translation.iter().chain(&self.quaternion).all(|v| v.is_finite()) {
            return Err(ServiceError::BadRequest("pose has non-finite values".into()));
        }
        let q = Quat::from(self.quaternion);
        let n = q.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(ServiceError::BadRequest(format!("quaternion norm {n} is not within {UNIT_NORM_TOLERANCE} of 1")));
        }
        Ok(Pose::new(self.translation, q.normalized()))
    }
}

/// Encoded PNGs for one pose. `confidence` is `None` for a Base model.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub rgb: Vec<u8>,
    pub depth: Vec<u8>,
    pub confidence: Option<Vec<u8>>,
    /// Pose after clamping to the model bounds.
    pub pose: Pose,
    pub clamped: bool,
    pub render_ms: f64,
}

fn png(width: usize, height: usize, color: ExtendedColorType, pixels: &[u8]) -> Result<Vec<u8>, ServiceError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(pixels, width as u32, height as u32, color)?;
    Ok(out)
}

/// Gray level of a confidence count: none black, one gray, several white.
pub fn confidence_level(count: u32) -> u8 {
    match count {
        0 => 0,
        1 => 128,
        _ => 255,
    }
}

/// Normalized depth in `[-1, 1]` mapped linearly onto `[0, 255]`, near is dark.
pub fn depth_level(d: f32) -> u8 {
    ((d as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn render(model: &Model, req: &RenderRequest) -> Result<Rendered, ServiceError> {
    let start = Instant::now();
    let (pose, clamped) = model.bounds().clamp(&req.to_pose()?);
    let pred = model.forward(&model.encode(&pose)?)?;
    let (w, h) = (pred.rgbd.width(), pred.rgbd.height());
    let rgb = png(w, h, ExtendedColorType::Rgb8, &pred.rgbd.rgb_u8())?;
    let gray: Vec<u8> = pred.rgbd.depth_plane().into_iter().map(depth_level).collect();
    let depth = png(w, h, ExtendedColorType::L8, &gray)?;
    let confidence = match &pred.slices {
        Some(stack) => {
            let levels: Vec<u8> = confidence_map(stack, CONFIDENCE_THRESHOLD).into_iter().map(confidence_level).collect();
            Some(png(w, h, ExtendedColorType::L8, &levels)?)
        }
        None => None,
    };
    Ok(Rendered {
        rgb,
        depth,
        confidence,
        pose,
        clamped,
        render_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_argument() {
        let r = RenderRequest::parse("0, -1.5,55,1,0,0,0").unwrap();
        assert_eq!(r.translation, [0.0, -1.5, 55.0]);
        assert_eq!(r.quaternion, [1.0, 0.0, 0.0, 0.0]);
        assert!(RenderRequest::parse("0,0,55,1,0,0").is_err());
        assert!(RenderRequest::parse("0,0,55,1,0,0,a").is_err());
    }

    #[test]
    fn quaternion_norm_tolerance() {
        let at = |w: f64| RenderRequest { translation: [0.0; 3], quaternion: [w, 0.0, 0.0, 0.0] }.to_pose();
        assert_eq!(at(1.0009).unwrap().rotation.w, 1.0);
        assert_eq!(at(0.9991).unwrap().rotation.w, 1.0);
        assert!(matches!(at(1.0011), Err(ServiceError::BadRequest(_))));
        assert!(matches!(at(f64::NAN), Err(ServiceError::BadRequest(_))));
    }

    #[test]
    fn visualization_levels() {
        assert_eq!([0, 1, 2, 7].map(confidence_level), [0, 128, 255, 255]);
        assert_eq!([-1.0, 0.0, 1.0, 3.0].map(depth_level), [0, 128, 255, 255]);
    }
}
