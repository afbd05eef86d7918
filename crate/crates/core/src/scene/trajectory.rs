use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{euler_to_quat, EulerAngles, Pose};

/// Back-and-forth survey pattern at constant altitude. Each frame's roll,
/// pitch and yaw are perturbed uniformly within `±jitter` while the camera
/// keeps looking down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawnMower {
    pub min_xy: [f64; 2],
    pub max_xy: [f64; 2],
    pub altitude: f64,
    pub frames: usize,
    pub jitter: f64,
    pub seed: u64,
}

pub fn lawn_mower(plan: &LawnMower) -> Result<Vec<Pose>> {
    if plan.frames == 0 {
        return Err(Error::Validation("lawn mower needs at least one frame".into()));
    }
    if !(plan.altitude > 0.0) || plan.jitter < 0.0 {
        return Err(Error::Validation("altitude must be positive and jitter non-negative".into()));
    }
    if (0..2).any(|a| !(plan.min_xy[a] <= plan.max_xy[a])) {
        return Err(Error::Validation("lawn mower area has min > max".into()));
    }
    let rows = (plan.frames as f64).sqrt().ceil() as usize;
    let per_row = plan.frames.div_ceil(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let mut poses = Vec::with_capacity(plan.frames);
    for i in 0..plan.frames {
        let (row, col) = (i / per_row, i % per_row);
        let col = if row % 2 == 0 { col } else { per_row - 1 - col };
        let x = lerp(plan.min_xy[0], plan.max_xy[0], frac(col, per_row));
        let y = lerp(plan.min_xy[1], plan.max_xy[1], frac(row, rows));
        let mut jitter = || {
            if plan.jitter > 0.0 {
                rng.random_range(-plan.jitter..=plan.jitter)
            } else {
                0.0
            }
        };
        let e = EulerAngles::new(jitter(), jitter(), jitter());
        poses.push(Pose::new([x, y, plan.altitude], euler_to_quat(e)));
    }
    Ok(poses)
}
