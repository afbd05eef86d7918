//! Procedural box-city scene and a raycaster producing ground-truth RGBD for
//! any camera pose.
//!
//! Camera frame: the identity rotation looks straight down (optical axis along
//! world `-z`), image `x` points along world `+x` and image up along world `+y`.
//! Depth is z-depth, the distance along the optical axis.

pub mod capture;
pub mod trajectory;

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::model::{DepthRange, DepthUnit, RgbdFrame};
use crate::pose::{Pose, PoseBounds};

pub use trajectory::{lawn_mower, LawnMower};

/// Translation margin added around trajectory extremes when deriving pose
/// bounds, so constant-altitude flights still get a non-degenerate z range.
pub const BOUNDS_MARGIN_M: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    /// Footprint center on the ground.
    pub center: [f64; 2],
    /// Extent along x, y and height.
    pub size: [f64; 3],
    pub color: [f64; 3],
    pub texture_seed: u64,
}

impl SceneBox {
    pub fn min(&self) -> [f64; 3] {
        [
            self.center[0] - self.size[0] / 2.0,
            self.center[1] - self.size[1] / 2.0,
            0.0,
        ]
    }

    pub fn max(&self) -> [f64; 3] {
        [
            self.center[0] + self.size[0] / 2.0,
            self.center[1] + self.size[1] / 2.0,
            self.size[2],
        ]
    }
}

/// Ground plane `z = 0` plus axis-aligned boxes standing on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub seed: u64,
    pub world_min: [f64; 3],
    pub world_max: [f64; 3],
    pub boxes: Vec<SceneBox>,
    /// Checker cell size of the ground texture.
    pub ground_cell: f64,
    pub ground_colors: [[f64; 3]; 2],
}

impl SceneDescription {
    pub fn world_diagonal(&self) -> f64 {
        (Vector3::from(self.world_max) - Vector3::from(self.world_min)).norm()
    }

    /// Depth assigned to rays that hit nothing.
    pub fn far_plane(&self) -> f64 {
        4.0 * self.world_diagonal()
    }
}

/// Deterministic scene over `[-w/2, w/2]^2` with heights up to `w/4`.
pub fn build_scene(seed: u64, n_boxes: usize, world_size: f64) -> Result<SceneDescription> {
    if !(world_size > 0.0) || !world_size.is_finite() {
        return Err(Error::Validation(format!("world size must be positive, got {world_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = world_size / 2.0;
    let max_height = world_size / 4.0;
    let boxes = (0..n_boxes)
        .map(|_| {
            let sx = rng.random_range(0.08..0.2) * world_size;
            let sy = rng.random_range(0.08..0.2) * world_size;
            let sz = rng.random_range(0.2..1.0) * max_height;
            let cx = rng.random_range(-half + sx / 2.0..=half - sx / 2.0);
            let cy = rng.random_range(-half + sy / 2.0..=half - sy / 2.0);
            SceneBox {
                center: [cx, cy],
                size: [sx, sy, sz],
                color: [
                    rng.random_range(0.25..0.95),
                    rng.random_range(0.25..0.95),
                    rng.random_range(0.25..0.95),
                ],
                texture_seed: rng.random(),
            }
        })
        .collect();
    Ok(SceneDescription {
        seed,
        world_min: [-half, -half, 0.0],
        world_max: [half, half, max_height],
        boxes,
        ground_cell: world_size / 8.0,
        ground_colors: [[0.30, 0.42, 0.25], [0.55, 0.52, 0.40]],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Field of view in radians (square images, so vertical equals horizontal).
    pub fov: f64,
    pub resolution: usize,
}

impl CameraIntrinsics {
    pub fn new(fov: f64, resolution: usize) -> Result<Self> {
        if !(fov > 0.0 && fov < std::f64::consts::PI) || resolution == 0 {
            return Err(Error::Validation(format!(
                "intrinsics need 0 < fov < pi and resolution > 0, got {fov}, {resolution}"
            )));
        }
        Ok(Self { fov, resolution })
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.resolution as f64 / 2.0 / (self.fov / 2.0).tan()
    }

    /// Camera-frame ray through the center of pixel `(px, py)`, with unit
    /// forward component so the ray parameter equals z-depth.
    pub fn ray(&self, px: usize, py: usize) -> Vector3<f64> {
        let c = self.resolution as f64 / 2.0;
        let f = self.focal();
        Vector3::new((px as f64 + 0.5 - c) / f, -(py as f64 + 0.5 - c) / f, -1.0)
    }
}

/// Rendered view: RGB in `[0, 1]` and z-depth in meters, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub resolution: usize,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    /// Pixels whose ray missed all geometry and got the far-plane depth.
    pub misses: usize,
}

impl RenderedView {
    /// Normalizes into an RGBD frame with the given depth range.
    pub fn to_frame(&self, range: &DepthRange) -> Result<RgbdFrame> {
        let mut data = Vec::with_capacity(self.depth.len() * 4);
        for (c, &d) in self.rgb.iter().zip(&self.depth) {
            data.extend(c.iter().map(|&v| (2.0 * v - 1.0).clamp(-1.0, 1.0) as f32));
            data.push(range.normalize(d).clamp(-1.0, 1.0) as f32);
        }
        RgbdFrame::new(self.resolution, self.resolution, data)
    }
}

struct Hit {
    t: f64,
    color: [f64; 3],
}

fn checker(u: f64, v: f64, cell: f64) -> bool {
    ((u / cell).floor() as i64 + (v / cell).floor() as i64).rem_euclid(2) == 0
}

fn ground_color(scene: &SceneDescription, x: f64, y: f64) -> [f64; 3] {
    let base = scene.ground_colors[checker(x, y, scene.ground_cell) as usize];
    let w = scene.world_max[0] - scene.world_min[0];
    let tint = 0.08 * (std::f64::consts::TAU * x / w).sin() * (std::f64::consts::TAU * y / w).cos();
    base.map(|c| (c + tint).clamp(0.0, 1.0))
}

fn box_color(b: &SceneBox, point: &Vector3<f64>, axis: usize) -> [f64; 3] {
    let stripe = (b.texture_seed % 3) as usize;
    let shade = match axis {
        2 => {
            let cell = b.size[0].min(b.size[1]) / 2.0;
            if checker(point.x - b.center[0], point.y - b.center[1], cell) {
                1.0
            } else {
                0.8
            }
        }
        0 => 0.7,
        _ => 0.55,
    };
    let mut c = b.color.map(|v| v * shade);
    if axis != 2 && ((point.z / (b.size[2] / 4.0).max(1e-9)).floor() as i64) % 2 == 0 {
        c[stripe] = (c[stripe] + 0.15).min(1.0);
    }
    c
}

/// Slab test. Returns entry distance and the axis of the entered face.
fn intersect_box(b: &SceneBox, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
    let (lo, hi) = (b.min(), b.max());
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
    }
    (t_near <= t_far && t_near > 1e-9).then_some((t_near, axis))
}

fn trace(scene: &SceneDescription, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if d.z < 0.0 && o.z > 0.0 {
        let t = -o.z / d.z;
        let p = o + d * t;
        best = Some(Hit {
            t,
            color: ground_color(scene, p.x, p.y),
        });
    }
    for b in &scene.boxes {
        if let Some((t, axis)) = intersect_box(b, o, d) {
            if best.as_ref().is_none_or(|h| t < h.t) {
                let p = o + d * t;
                best = Some(Hit {
                    t,
                    color: box_color(b, &p, axis),
                });
            }
        }
    }
    best
}

const SKY: [f64; 3] = [0.62, 0.75, 0.92];

/// Ground-truth RGB and z-depth for `pose`. Pure in all three arguments.
pub fn render_gt(scene: &SceneDescription, pose: &Pose, intrinsics: &CameraIntrinsics) -> RenderedView {
    let n = intrinsics.resolution;
    let origin = pose.t();
    let far = scene.far_plane();
    let pixels: Vec<([f64; 3], f64, bool)> = (0..n * n)
        .into_par_iter()
        .map(|i| {
            let ray = intrinsics.ray(i % n, i / n);
            let dir = pose.rotation.rotate(&ray);
            match trace(scene, &origin, &dir) {
                Some(h) if h.t <= far => (h.color, h.t, false),
                _ => (SKY, far, true),
            }
        })
        .collect();
    RenderedView {
        resolution: n,
        misses: pixels.iter().filter(|p| p.2).count(),
        rgb: pixels.iter().map(|p| p.0).collect(),
        depth: pixels.iter().map(|p| p.1).collect(),
    }
}

/// Renders `trajectory` and writes it as a dataset under `out`. The depth
/// range is the observed min/max over all frames.
pub fn generate_dataset(
    scene: &SceneDescription,
    trajectory: &[Pose],
    intrinsics: &CameraIntrinsics,
    out: impl AsRef<Path>,
    name: &str,
) -> Result<Dataset> {
    if trajectory.is_empty() {
        return Err(Error::Validation("empty trajectory".into()));
    }
    let views: Vec<RenderedView> = trajectory.iter().map(|p| render_gt(scene, p, intrinsics)).collect();
    let (lo, hi) = views
        .iter()
        .flat_map(|v| v.depth.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let range = DepthRange::new(lo, hi, DepthUnit::Meters)?;
    let bounds = PoseBounds::from_poses(trajectory, BOUNDS_MARGIN_M)?;
    let misses: usize = views.iter().map(|v| v.misses).sum();
    let mut manifest = DatasetManifest::new(name, intrinsics.resolution, bounds, range);
    if misses > 0 {
        manifest.far_plane_m = Some(scene.far_plane());
        log::warn!("{misses} pixels missed all geometry and were set to the far plane");
    }
    let mut ds = Dataset::create(out, manifest)?;
    for (i, (pose, view)) in trajectory.iter().zip(&views).enumerate() {
        ds.write_frame(i as f64 * 0.1, *pose, &view.to_frame(&range)?)?;
    }
    ds.save_manifest()?;
    Ok(ds)
}
