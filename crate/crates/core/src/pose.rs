//! Camera pose algebra and the pose encoding fed to the generators.
//!
//! Rotations are unit quaternions `(w, x, y, z)` rotating camera-frame vectors
//! into the world frame, always stored with `w >= 0`. Euler angles follow the
//! intrinsic Z-Y-X (yaw, pitch, roll) convention: `R = Rz(yaw) Ry(pitch) Rx(roll)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quat {
    fn from(v: [f64; 4]) -> Self {
        Quat::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let a = axis.normalize() * (angle / 2.0).sin();
        Quat::new((angle / 2.0).cos(), a.x, a.y, a.z).canonical()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Picks the representative with `w >= 0`; when `w == 0` the first
    /// non-zero vector component is made positive.
    pub fn canonical(&self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|&c| c != 0.0)
                .is_some_and(|c| c < 0.0)
        };
        if flip {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Rotation angle between two orientations, in `[0, pi]`.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let d = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        2.0 * d.min(1.0).acos()
    }

    /// Shortest-arc spherical interpolation.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut b = *other;
        let mut d = self.w * b.w + self.x * b.x + self.y * b.y + self.z * b.z;
        if d < 0.0 {
            b = Quat::new(-b.w, -b.x, -b.y, -b.z);
            d = -d;
        }
        let (wa, wb) = if d > 1.0 - 1e-12 {
            (1.0 - t, t)
        } else {
            let theta = d.acos();
            let s = theta.sin();
            (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
        };
        Quat::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
        .normalized()
        .canonical()
    }
}

/// Roll `phi`, pitch `theta`, yaw `psi` in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerConversion {
    pub angles: EulerAngles,
    /// Pitch within 1e-6 of +-pi/2; yaw is then fixed to 0.
    pub gimbal_lock: bool,
}

pub const GIMBAL_LOCK_BAND: f64 = 1e-6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

pub fn euler_to_quat(e: EulerAngles) -> Quat {
    let (sr, cr) = (e.roll / 2.0).sin_cos();
    let (sp, cp) = (e.pitch / 2.0).sin_cos();
    let (sy, cy) = (e.yaw / 2.0).sin_cos();
    Quat::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )
    .canonical()
}

pub fn quat_to_euler(q: Quat) -> EulerConversion {
    let Quat { w, x, y, z } = q.normalized();
    let sin_pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    if FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_BAND {
        // Only roll - yaw (or roll + yaw) is observable; put it all in roll.
        let r01 = 2.0 * (x * y - w * z);
        let r11 = 1.0 - 2.0 * (x * x + z * z);
        let roll = (sin_pitch.signum() * r01).atan2(r11);
        return EulerConversion {
            angles: EulerAngles::new(wrap_angle(roll), pitch, 0.0),
            gimbal_lock: true,
        };
    }
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    EulerConversion {
        angles: EulerAngles::new(wrap_angle(roll), pitch, wrap_angle(yaw)),
        gimbal_lock: false,
    }
}

/// Absolute camera state: translation in meters plus orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: [f64; 3],
    pub rotation: Quat,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        translation: [0.0; 3],
        rotation: Quat::IDENTITY,
    };

    pub fn new(translation: [f64; 3], rotation: Quat) -> Self {
        Self {
            translation,
            rotation: rotation.normalized().canonical(),
        }
    }

    pub fn t(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Applies a relative motion expressed in this pose's camera frame.
    pub fn compose(&self, rel: &RelativePose) -> Pose {
        let t = self.t() + self.rotation.rotate(&rel.translation);
        Pose::new(t.into(), self.rotation.mul(&rel.rotation))
    }

    /// Pose closeness test used for duplicate detection.
    pub fn approx_eq(&self, other: &Pose, translation_tol: f64, angle_tol: f64) -> bool {
        (self.t() - other.t()).norm() <= translation_tol && self.rotation.angle_to(&other.rotation) <= angle_tol
    }
}

/// Rigid motion from one camera frame to another, in the first frame's coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
    /// Translation in meters (true) or in an arbitrary unit (false).
    pub scaled: bool,
}

impl RelativePose {
    pub fn identity(scaled: bool) -> Self {
        Self {
            rotation: Quat::IDENTITY,
            translation: Vector3::zeros(),
            scaled,
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RelativePose) -> RelativePose {
        RelativePose {
            rotation: self.rotation.mul(&next.rotation).normalized().canonical(),
            translation: self.translation + self.rotation.rotate(&next.translation),
            scaled: self.scaled && next.scaled,
        }
    }

    pub fn inverse(&self) -> RelativePose {
        let inv = self.rotation.conjugate();
        RelativePose {
            rotation: inv.canonical(),
            translation: -inv.rotate(&self.translation),
            scaled: self.scaled,
        }
    }
}

pub fn relative_from_absolute(a: &Pose, b: &Pose) -> RelativePose {
    let inv = a.rotation.conjugate();
    RelativePose {
        rotation: inv.mul(&b.rotation).normalized().canonical(),
        translation: inv.rotate(&(b.t() - a.t())),
        scaled: true,
    }
}

/// Chains relative motions from an identity key frame. The result has one more
/// entry than `chain`, starting with the key frame.
pub fn compose_relative_poses(chain: &[RelativePose]) -> Result<Vec<Pose>> {
    if chain.is_empty() {
        return Err(Error::Validation("compose_relative_poses: empty chain".into()));
    }
    let mut out = Vec::with_capacity(chain.len() + 1);
    out.push(Pose::IDENTITY);
    for rel in chain {
        let next = out.last().expect("non-empty").compose(rel);
        out.push(next);
    }
    Ok(out)
}

/// Axis-aligned translation bounds in meters, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PoseBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !(self.min[axis] < self.max[axis]) {
                return Err(Error::Validation(format!(
                    "degenerate pose bounds on axis {axis}: min {} max {}",
                    self.min[axis], self.max[axis]
                )));
            }
        }
        Ok(())
    }

    /// Tight bounds over `poses`, widened by `margin` meters on each side.
    pub fn from_poses<'a>(poses: impl IntoIterator<Item = &'a Pose>, margin: f64) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in poses {
            for a in 0..3 {
                min[a] = min[a].min(p.translation[a]);
                max[a] = max[a].max(p.translation[a]);
            }
        }
        if !min[0].is_finite() {
            return Err(Error::Validation("pose bounds from an empty pose set".into()));
        }
        for a in 0..3 {
            min[a] -= margin;
            max[a] += margin;
        }
        Self::new(min, max)
    }

    pub fn contains(&self, t: &[f64; 3]) -> bool {
        (0..3).all(|a| t[a] >= self.min[a] && t[a] <= self.max[a])
    }

    /// Clamps the translation into bounds; the flag reports whether it moved.
    pub fn clamp(&self, pose: &Pose) -> (Pose, bool) {
        let mut t = pose.translation;
        let mut clamped = false;
        for a in 0..3 {
            let c = t[a].clamp(self.min[a], self.max[a]);
            clamped |= c != t[a];
            t[a] = c;
        }
        (
            Pose {
                translation: t,
                rotation: pose.rotation,
            },
            clamped,
        )
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }
}

/// Rotation part of the network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InputMode {
    /// Translation plus roll, pitch, yaw: 6 values.
    #[serde(rename = "6dof")]
    Euler,
    /// Translation plus quaternion: 7 values.
    #[default]
    #[serde(rename = "6dof-quat")]
    Quaternion,
}

impl InputMode {
    pub fn input_dim(self) -> usize {
        match self {
            InputMode::Euler => 6,
            InputMode::Quaternion => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Euler => "6dof",
            InputMode::Quaternion => "6dof-quat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "6dof" | "euler" => Ok(InputMode::Euler),
            "6dof-quat" | "quat" | "quaternion" => Ok(InputMode::Quaternion),
            other => Err(Error::Validation(format!("unknown input mode {other:?}"))),
        }
    }
}

/// Network input; every component lies in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPose {
    pub mode: InputMode,
    pub values: Vec<f64>,
}

const ANGLE_SCALES: [f64; 3] = [PI, FRAC_PI_2, PI];

/// Maps translation min-max onto `[-1, 1]`; rotation is either the quaternion
/// as-is or Euler angles divided by their range. Out-of-bounds translations
/// are clamped with a warning.
pub fn normalize_pose(pose: &Pose, bounds: &PoseBounds, mode: InputMode) -> Result<EncodedPose> {
    bounds.validate()?;
    let (p, clamped) = bounds.clamp(pose);
    if clamped {
        log::warn!("pose {:?} outside bounds, clamped", pose.translation);
    }
    let mut values = Vec::with_capacity(mode.input_dim());
    for a in 0..3 {
        let span = bounds.max[a] - bounds.min[a];
        values.push((2.0 * (p.translation[a] - bounds.min[a]) / span - 1.0).clamp(-1.0, 1.0));
    }
    let q = p.rotation.normalized().canonical();
    match mode {
        InputMode::Quaternion => values.extend([q.w, q.x, q.y, q.z]),
        InputMode::Euler => {
            let e = quat_to_euler(q).angles;
            for (v, s) in [e.roll, e.pitch, e.yaw].into_iter().zip(ANGLE_SCALES) {
                values.push((v / s).clamp(-1.0, 1.0));
            }
        }
    }
    Ok(EncodedPose { mode, values })
}

pub fn denormalize_pose(encoded: &EncodedPose, bounds: &PoseBounds) -> Result<Pose> {
    bounds.validate()?;
    let v = &encoded.values;
    if v.len() != encoded.mode.input_dim() {
        return Err(Error::Dimension(format!(
            "encoded pose has {} values, mode {} needs {}",
            v.len(),
            encoded.mode.as_str(),
            encoded.mode.input_dim()
        )));
    }
    if let Some(bad) = v.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
        return Err(Error::Validation(format!("encoded component {bad} outside [-1, 1]")));
    }
    let mut t = [0.0; 3];
    for a in 0..3 {
        t[a] = bounds.min[a] + (v[a] + 1.0) / 2.0 * (bounds.max[a] - bounds.min[a]);
    }
    let q = match encoded.mode {
        InputMode::Quaternion => {
            let q = Quat::new(v[3], v[4], v[5], v[6]);
            if q.norm() == 0.0 {
                return Err(Error::Validation("zero quaternion".into()));
            }
            q
        }
        InputMode::Euler => euler_to_quat(EulerAngles::new(v[3] * PI, v[4] * FRAC_PI_2, v[5] * PI)),
    };
    Ok(Pose::new(t, q))
}
