//! Building a training set from raw video and a GPS pose log: the two streams
//! are put on a common time grid, their motion signals (optical-flow magnitude
//! and GPS speed) are aligned by cross-correlation, and the overlapping frames
//! are paired with poses. [`scale`] then turns monocular disparities into
//! metric depth.

pub mod capture;
pub mod flow;
pub mod pipeline;
pub mod scale;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Pose, Quat};

pub use flow::{compute_flow, flow_magnitude, flow_magnitudes, FlowField, GrayImage};
pub use scale::{apply_scaling, find_scale, ScaleEstimate};

pub const MEDIAN_WINDOW: usize = 5;
pub const MIN_PEAK_CORRELATION: f64 = 0.2;
/// Lags whose overlap is shorter than this fraction of the shorter signal are
/// not considered.
pub const MIN_OVERLAP_FRACTION: f64 = 0.5;

const GRID_EPS: f64 = 1e-9;

/// Timestamped scalar samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSeries {
    timestamps: Vec<f64>,
    values: Vec<f64>,
    frequency: f64,
}

fn check_increasing(t: &[f64]) -> Result<()> {
    if t.len() < 2 {
        return Err(Error::Validation(format!("signal needs at least 2 samples, got {}", t.len())));
    }
    if let Some(i) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Validation(format!("timestamps not strictly increasing at sample {}", i + 1)));
    }
    Ok(())
}

impl SignalSeries {
    pub fn new(timestamps: Vec<f64>, values: Vec<f64>, frequency: f64) -> Result<Self> {
        check_increasing(&timestamps)?;
        if values.len() != timestamps.len() {
            return Err(Error::Dimension(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if !(frequency > 0.0) {
            return Err(Error::Validation(format!("frequency must be positive, got {frequency}")));
        }
        Ok(Self {
            timestamps,
            values,
            frequency,
        })
    }

    /// Samples at `start + k / frequency`.
    pub fn uniform(start: f64, frequency: f64, values: Vec<f64>) -> Result<Self> {
        if !(frequency > 0.0) {
            return Err(Error::Validation(format!("frequency must be positive, got {frequency}")));
        }
        let t = (0..values.len()).map(|k| start + k as f64 / frequency).collect();
        Self::new(t, values, frequency)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform grid `t0 + k / freq` covering `[t0, t_last]`, never beyond it.
fn grid(t0: f64, t_last: f64, freq: f64) -> Result<Vec<f64>> {
    if !(freq > 0.0) || !freq.is_finite() {
        return Err(Error::Validation(format!("target frequency must be positive, got {freq}")));
    }
    let n = ((t_last - t0) * freq + GRID_EPS).floor() as usize + 1;
    Ok((0..n).map(|k| t0 + k as f64 / freq).collect())
}

/// For each grid time, the bracketing sample index `i` and weight `w` so
/// the value is `(1 - w) * s[i] + w * s[i + 1]`.
fn brackets(times: &[f64], grid: &[f64]) -> Vec<(usize, f64)> {
    let mut i = 0;
    grid.iter()
        .map(|&t| {
            while i + 2 < times.len() && times[i + 1] <= t {
                i += 1;
            }
            let w = ((t - times[i]) / (times[i + 1] - times[i])).clamp(0.0, 1.0);
            (i, w)
        })
        .collect()
}

/// Linear resampling onto a uniform grid at `target_freq` over the original
/// time span.
pub fn interpolate_signal(s: &SignalSeries, target_freq: f64) -> Result<SignalSeries> {
    let t = &s.timestamps;
    let g = grid(t[0], t[t.len() - 1], target_freq)?;
    let values = brackets(t, &g)
        .into_iter()
        .map(|(i, w)| if w == 0.0 { s.values[i] } else { (1.0 - w) * s.values[i] + w * s.values[i + 1] })
        .collect();
    SignalSeries::new(g, values, target_freq)
}

/// Timestamped absolute poses, as read from a GPS log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrack {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose>,
    /// False when the log carried positions only (rotations are identity).
    pub has_rotation: bool,
}

impl PoseTrack {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Pose>, has_rotation: bool) -> Result<Self> {
        check_increasing(&timestamps)?;
        if timestamps.len() != poses.len() {
            return Err(Error::Dimension("pose track timestamps and poses differ in length".into()));
        }
        Ok(Self {
            timestamps,
            poses,
            has_rotation,
        })
    }

    /// Parses `timestamp_s,x,y,z[,qw,qx,qy,qz]` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Vec::new();
        let mut poses = Vec::new();
        let mut with_rot = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Format(format!("GPS log line {}: {m}", n + 1));
            let fields = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad(&format!("bad number {f:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let rot = match fields.len() {
                4 => false,
                8 => true,
                k => return Err(bad(&format!("expected 4 or 8 fields, got {k}"))),
            };
            if *with_rot.get_or_insert(rot) != rot {
                return Err(bad("mixes lines with and without rotation"));
            }
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite value"));
            }
            let q = if rot {
                let q = Quat::new(fields[4], fields[5], fields[6], fields[7]);
                if q.norm() < 1e-9 {
                    return Err(bad("zero quaternion"));
                }
                q
            } else {
                Quat::IDENTITY
            };
            t.push(fields[0]);
            poses.push(Pose::new([fields[1], fields[2], fields[3]], q));
        }
        Self::new(t, poses, with_rot.unwrap_or(false))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for (t, p) in self.timestamps.iter().zip(&self.poses) {
            let [x, y, z] = p.translation;
            if self.has_rotation {
                let q = p.rotation;
                out.push_str(&format!("{t},{x},{y},{z},{},{},{},{}\n", q.w, q.x, q.y, q.z));
            } else {
                out.push_str(&format!("{t},{x},{y},{z}\n"));
            }
        }
        out
    }

    /// Linear translation and slerp rotation onto a uniform grid at `freq`.
    pub fn resample(&self, freq: f64) -> Result<PoseTrack> {
        let t = &self.timestamps;
        let g = grid(t[0], t[t.len() - 1], freq)?;
        let poses = brackets(t, &g)
            .into_iter()
            .map(|(i, w)| {
                let (a, b) = (&self.poses[i], &self.poses[i + 1]);
                let tr = [0, 1, 2].map(|k| a.translation[k] + w * (b.translation[k] - a.translation[k]));
                Pose::new(tr, a.rotation.slerp(&b.rotation, w))
            })
            .collect();
        PoseTrack::new(g, poses, self.has_rotation)
    }

    /// Translation distance between consecutive samples times `freq`; one
    /// shorter than the track.
    pub fn speeds(&self, freq: f64) -> Vec<f64> {
        self.poses
            .windows(2)
            .map(|w| (w[1].t() - w[0].t()).norm() * freq)
            .collect()
    }
}

/// Sliding median with the window truncated at the ends.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let n = w.len();
            if n % 2 == 1 {
                w[n / 2]
            } else {
                0.5 * (w[n / 2 - 1] + w[n / 2])
            }
        })
        .collect()
}

/// Zero mean, unit variance; all zeros for a constant signal.
pub fn z_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let d = (saa * sbb).sqrt();
    if d > 1e-12 {
        sab / d
    } else {
        0.0
    }
}

/// Alignment of a flow-magnitude signal against a speed signal.
/// `flow[t]` pairs with `speed[t + offset]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalMatch {
    pub offset: i64,
    pub peak: f64,
    /// Inclusive range of flow sample indices that have a partner.
    pub start: usize,
    pub end: usize,
    pub correlations: Vec<(i64, f64)>,
}

/// Median-filters and z-normalizes both signals, then picks the lag in
/// `[-max_offset, max_offset]` with the highest Pearson correlation over the
/// overlap. Ties go to the smaller `|lag|`, then the negative one.
/// `range` optionally restricts the flow samples used for scoring.
pub fn match_signals(
    flow: &SignalSeries,
    speed: &SignalSeries,
    max_offset: usize,
    range: Option<(usize, usize)>,
) -> Result<SignalMatch> {
    let rel = (flow.frequency - speed.frequency).abs() / flow.frequency;
    if rel > 1e-9 {
        return Err(Error::Validation(format!(
            "signals sampled at {} Hz and {} Hz; resample first",
            flow.frequency, speed.frequency
        )));
    }
    let f = z_normalize(&median_filter(&flow.values, MEDIAN_WINDOW));
    let s = z_normalize(&median_filter(&speed.values, MEDIAN_WINDOW));
    let (r0, r1) = match range {
        Some((a, b)) if a < b && b <= f.len() => (a, b),
        Some((a, b)) => {
            return Err(Error::Validation(format!(
                "frame range {a}..{b} invalid for {} flow samples",
                f.len()
            )))
        }
        None => (0, f.len()),
    };
    let min_overlap = ((MIN_OVERLAP_FRACTION * (r1 - r0).min(s.len()) as f64).ceil() as usize).max(3);
    let mut lags: Vec<i64> = (-(max_offset as i64)..=max_offset as i64).collect();
    lags.sort_by_key(|&k| (k.abs(), k));
    let mut correlations = Vec::new();
    let mut best: Option<(i64, f64)> = None;
    for k in lags {
        let lo = (r0 as i64).max(-k);
        let hi = (r1 as i64).min(s.len() as i64 - k);
        if hi - lo < min_overlap as i64 {
            continue;
        }
        let (lo, hi) = (lo as usize, hi as usize);
        let a = &f[lo..hi];
        let b = &s[(lo as i64 + k) as usize..(hi as i64 + k) as usize];
        let c = pearson(a, b);
        correlations.push((k, c));
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    correlations.sort_by_key(|c| c.0);
    let (offset, peak) = best.ok_or_else(|| Error::Validation("no lag has enough overlap".into()))?;
    if !(peak >= MIN_PEAK_CORRELATION) {
        return Err(Error::LowConfidence {
            peak,
            threshold: MIN_PEAK_CORRELATION,
        });
    }
    let start = (-offset).max(0) as usize;
    let end = (f.len() as i64).min(s.len() as i64 - offset) - 1;
    if end < start as i64 {
        return Err(Error::Validation("signals do not overlap at the recovered offset".into()));
    }
    Ok(SignalMatch {
        offset,
        peak,
        start,
        end: end as usize,
        correlations,
    })
}

/// Frames paired with GPS poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    /// Frame `i` pairs with GPS grid sample `i + offset`.
    pub offset: i64,
    pub peak: f64,
    /// Inclusive frame index range with a paired pose.
    pub start: usize,
    pub end: usize,
    pub pairs: Vec<(usize, Pose)>,
    /// Clock time of each pair's GPS sample.
    pub gps_times: Vec<f64>,
}

/// Resamples the GPS track at the video rate, aligns GPS speed with flow
/// magnitude and pairs every overlapping frame with its interpolated pose.
/// `flow_mags[i]` is the flow between frames `i` and `i + 1`.
pub fn synchronize_dataset(
    n_frames: usize,
    fps: f64,
    gps: &PoseTrack,
    flow_mags: &[f64],
    max_offset: usize,
    range: Option<(usize, usize)>,
) -> Result<SyncResult> {
    if flow_mags.len() + 1 != n_frames {
        return Err(Error::Dimension(format!(
            "{n_frames} frames need {} flow magnitudes, got {}",
            n_frames.saturating_sub(1),
            flow_mags.len()
        )));
    }
    let grid = gps.resample(fps)?;
    let speed = SignalSeries::uniform(0.0, fps, grid.speeds(fps))?;
    let flow = SignalSeries::uniform(0.0, fps, flow_mags.to_vec())?;
    let m = match_signals(&flow, &speed, max_offset, range)?;
    let start = (-m.offset).max(0) as usize;
    let end = (n_frames as i64).min(grid.poses.len() as i64 - m.offset) - 1;
    if end < start as i64 {
        return Err(Error::Validation("empty intersection between video and GPS".into()));
    }
    let end = end as usize;
    let idx = |i: usize| (i as i64 + m.offset) as usize;
    Ok(SyncResult {
        offset: m.offset,
        peak: m.peak,
        start,
        end,
        pairs: (start..=end).map(|i| (i, grid.poses[idx(i)])).collect(),
        gps_times: (start..=end).map(|i| grid.timestamps[idx(i)]).collect(),
    })
}
