//! Fabricated raw captures: a video flown through the scene, a GPS log on its
//! own clock that starts before the video, oracle disparities and unscaled
//! visual-odometry motion.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datastore::write_rgb_png;
use crate::error::{Error, Result};
use crate::model::{DepthRange, DepthUnit};
use crate::pose::{euler_to_quat, relative_from_absolute, EulerAngles, Pose, RelativePose};
use crate::sync::capture::{video_path, CaptureDir, VideoMeta};
use crate::sync::PoseTrack;

use super::{render_gt, CameraIntrinsics, SceneDescription};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapturePlan {
    pub frames: usize,
    pub fps: f64,
    pub gps_rate: f64,
    /// GPS logging starts this many video frames before the first frame.
    pub gps_lead_frames: usize,
    /// GPS logging stops this many video frames before the last frame.
    pub gps_early_stop_frames: usize,
    /// Added to every GPS timestamp.
    pub clock_offset_s: f64,
    pub gps_noise_m: f64,
    /// Unscaled units per meter in disparities and relative poses.
    pub unscaled_per_meter: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub altitude: f64,
    pub mean_speed: f64,
    pub seed: u64,
}

impl Default for CapturePlan {
    fn default() -> Self {
        Self {
            frames: 72,
            fps: 10.0,
            gps_rate: 20.0,
            gps_lead_frames: 7,
            gps_early_stop_frames: 8,
            clock_offset_s: 1000.0,
            gps_noise_m: 0.01,
            unscaled_per_meter: 1.0 / 4.2,
            center: [0.0, 0.0],
            radius: 8.0,
            altitude: 30.0,
            mean_speed: 7.0,
            seed: 0,
        }
    }
}

/// Spacing of the random speed knots.
const KNOT_SPACING_S: f64 = 0.8;
/// Knot speeds are drawn from this range, as multiples of the mean speed.
const SPEED_RANGE: (f64, f64) = (0.25, 1.75);

/// Continuous flight: a circle traversed at a non-periodic speed (random
/// knots joined by cosine easing), with small attitude wobble.
#[derive(Clone, Debug)]
pub struct Flight {
    center: [f64; 2],
    radius: f64,
    altitude: f64,
    /// Time of the first knot.
    start: f64,
    knots: Vec<f64>,
    wobble: [(f64, f64, f64); 3],
}

impl Flight {
    /// Covers `[t_min, t_max]`.
    pub fn new(plan: &CapturePlan, t_min: f64, t_max: f64) -> Result<Self> {
        if !(plan.radius > 0.0 && plan.altitude > 0.0 && plan.mean_speed > 0.0) {
            return Err(Error::Validation("flight needs positive radius, altitude and speed".into()));
        }
        if !(t_min < t_max) {
            return Err(Error::Validation("flight time span is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let n = ((t_max - t_min) / KNOT_SPACING_S).ceil() as usize + 2;
        let knots = (0..n)
            .map(|_| plan.mean_speed * rng.random_range(SPEED_RANGE.0..=SPEED_RANGE.1))
            .collect();
        let wobble = [0.03, 0.03, 0.05].map(|a| (a, rng.random_range(0.3..1.2), rng.random_range(0.0..TAU)));
        Ok(Self {
            center: plan.center,
            radius: plan.radius,
            altitude: plan.altitude,
            start: t_min,
            knots,
            wobble,
        })
    }

    /// Segment index and position within it, clamped to the knot span.
    fn locate(&self, t: f64) -> (usize, f64) {
        let x = ((t - self.start) / KNOT_SPACING_S).max(0.0);
        let i = (x.floor() as usize).min(self.knots.len() - 2);
        (i, (x - i as f64).min(1.0))
    }

    pub fn speed(&self, t: f64) -> f64 {
        let (i, x) = self.locate(t);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        a + (b - a) * (1.0 - (std::f64::consts::PI * x).cos()) / 2.0
    }

    /// Distance flown since the first knot.
    fn arc_length(&self, t: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let seg = |a: f64, b: f64, x: f64| a * x + (b - a) * (x / 2.0 - (pi * x).sin() / (2.0 * pi));
        let (i, x) = self.locate(t);
        let full: f64 = self.knots.windows(2).take(i).map(|w| seg(w[0], w[1], 1.0)).sum();
        KNOT_SPACING_S * (full + seg(self.knots[i], self.knots[i + 1], x))
    }

    pub fn pose(&self, t: f64) -> Pose {
        let phi = self.arc_length(t) / self.radius;
        let [r, p, y] = self.wobble.map(|(a, w, ph)| a * (w * t + ph).sin());
        Pose::new(
            [
                self.center[0] + self.radius * phi.cos(),
                self.center[1] + self.radius * phi.sin(),
                self.altitude,
            ],
            euler_to_quat(EulerAngles::new(r, p, y)),
        )
    }
}

/// What the simulator knows but the pipeline must recover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureTruth {
    /// True pose of every video frame.
    pub poses: Vec<Pose>,
    /// Video frame `i` corresponds to resampled GPS sample `i + offset`.
    pub offset: i64,
    /// Meters per unscaled unit.
    pub scale: f64,
    /// Metric z-depth range over all frames.
    pub depth_range: DepthRange,
}

/// Renders the plan's flight and writes a capture directory under `out`.
pub fn simulate_capture(
    scene: &SceneDescription,
    plan: &CapturePlan,
    intrinsics: &CameraIntrinsics,
    out: impl AsRef<Path>,
) -> Result<(CaptureDir, CaptureTruth)> {
    if plan.frames < 2 || !(plan.fps > 0.0 && plan.gps_rate > 0.0 && plan.unscaled_per_meter > 0.0) {
        return Err(Error::Validation("capture needs >= 2 frames and positive rates and unit".into()));
    }
    if plan.gps_early_stop_frames + 2 > plan.frames {
        return Err(Error::Validation("GPS log would not overlap the video".into()));
    }
    let t0 = -(plan.gps_lead_frames as f64) / plan.fps;
    let t_end = (plan.frames - 1) as f64 / plan.fps;
    let flight = Flight::new(plan, t0, t_end)?;
    let poses: Vec<Pose> = (0..plan.frames).map(|i| flight.pose(i as f64 / plan.fps)).collect();
    let capture = CaptureDir::create(
        out,
        VideoMeta {
            fps: plan.fps,
            frames: plan.frames,
            resolution: intrinsics.resolution,
        },
    )?;
    let u = plan.unscaled_per_meter;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, pose) in poses.iter().enumerate() {
        let view = render_gt(scene, pose, intrinsics);
        let rgb = view
            .rgb
            .iter()
            .flat_map(|c| c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect();
        write_rgb_png(&capture.root().join(video_path(i)), intrinsics.resolution, rgb)?;
        for &z in &view.depth {
            lo = lo.min(z);
            hi = hi.max(z);
        }
        let disparity: Vec<f32> = view.depth.iter().map(|&z| (1.0 / (z * u)) as f32).collect();
        capture.write_disparity(i, &disparity)?;
    }
    let rel: Vec<RelativePose> = poses
        .windows(2)
        .map(|w| {
            let mut r = relative_from_absolute(&w[0], &w[1]);
            r.translation *= u;
            r.scaled = false;
            r
        })
        .collect();
    capture.write_relposes(&rel)?;

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x0067_7073_5f6c_6f67);
    let noise = Normal::new(0.0, plan.gps_noise_m.max(0.0)).map_err(|e| Error::Validation(e.to_string()))?;
    let t1 = (plan.frames - 1 - plan.gps_early_stop_frames) as f64 / plan.fps;
    let samples = ((t1 - t0) * plan.gps_rate + 1e-9).floor() as usize + 1;
    let (mut ts, mut gps) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for k in 0..samples {
        let t = t0 + k as f64 / plan.gps_rate;
        let mut p = flight.pose(t);
        for c in &mut p.translation {
            *c += noise.sample(&mut rng);
        }
        ts.push(t + plan.clock_offset_s);
        gps.push(p);
    }
    capture.write_gps(&PoseTrack::new(ts, gps, true)?)?;
    let truth = CaptureTruth {
        poses,
        offset: plan.gps_lead_frames as i64,
        scale: 1.0 / u,
        depth_range: DepthRange::new(lo, hi, DepthUnit::Meters)?,
    };
    Ok((capture, truth))
}
