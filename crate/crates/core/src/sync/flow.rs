//! Block-matching optical flow.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::RgbdFrame;

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "gray image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Luma of 8-bit RGB, on the `[0, 255]` scale.
    pub fn from_rgb_u8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        let data = rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect();
        Self::new(width, height, data)
    }

    pub fn from_frame(frame: &RgbdFrame) -> Result<Self> {
        Self::from_rgb_u8(frame.width(), frame.height(), &frame.rgb_u8())
    }

    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel displacement `(u, v)` such that `a(x, y) ≈ b(x + u, y + v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }
}

/// Candidate displacements in tie-break order: smaller magnitude first, then
/// row-major (`v`, then `u`).
fn candidates(search: i64) -> Vec<(i64, i64)> {
    let mut c: Vec<(i64, i64)> = (-search..=search)
        .flat_map(|v| (-search..=search).map(move |u| (u, v)))
        .collect();
    c.sort_by_key(|&(u, v)| (u * u + v * v, v, u));
    c
}

/// Integer block flow by exhaustive sum-of-absolute-differences search. Blocks
/// at the image edge are clipped; candidates that move a block outside `b`
/// are skipped. Every pixel of a block shares the block's displacement.
pub fn compute_flow(a: &GrayImage, b: &GrayImage, block: usize, search: usize) -> Result<FlowField> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Dimension(format!(
            "flow frames differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if block == 0 {
        return Err(Error::Validation("flow block size must be positive".into()));
    }
    let (w, h) = (a.width, a.height);
    let cands = candidates(search as i64);
    let bx_n = w.div_ceil(block);
    let by_n = h.div_ceil(block);
    let per_block: Vec<(i64, i64)> = (0..bx_n * by_n)
        .into_par_iter()
        .map(|bi| {
            let (x0, y0) = ((bi % bx_n) * block, (bi / bx_n) * block);
            let (x1, y1) = ((x0 + block).min(w), (y0 + block).min(h));
            let mut best = (0i64, 0i64);
            let mut best_sad = f64::INFINITY;
            for &(u, v) in &cands {
                let inside = x0 as i64 + u >= 0
                    && y0 as i64 + v >= 0
                    && x1 as i64 + u <= w as i64
                    && y1 as i64 + v <= h as i64;
                if !inside {
                    continue;
                }
                let mut sad = 0.0f64;
                for y in y0..y1 {
                    let yb = (y as i64 + v) as usize;
                    for x in x0..x1 {
                        let xb = (x as i64 + u) as usize;
                        sad += (a.at(x, y) - b.at(xb, yb)).abs() as f64;
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best = (u, v);
                }
            }
            best
        })
        .collect();
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (u, v) = per_block[(y / block) * bx_n + x / block];
            [u as f32, v as f32]
        })
        .collect();
    Ok(FlowField { width: w, height: h, data })
}

/// Mean per-pixel flow length.
pub fn flow_magnitude(f: &FlowField) -> f64 {
    if f.data.is_empty() {
        return 0.0;
    }
    f.data
        .iter()
        .map(|[u, v]| ((*u as f64).powi(2) + (*v as f64).powi(2)).sqrt())
        .sum::<f64>()
        / f.data.len() as f64
}

/// Flow magnitude between each pair of consecutive frames; one shorter than
/// `frames`.
pub fn flow_magnitudes(frames: &[GrayImage], block: usize, search: usize) -> Result<Vec<f64>> {
    frames
        .par_windows(2)
        .map(|p| compute_flow(&p[0], &p[1], block, search).map(|f| flow_magnitude(&f)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_order_prefers_small_then_row_major() {
        let c = candidates(1);
        assert_eq!(c[0], (0, 0));
        assert_eq!(&c[1..5], &[(0, -1), (-1, 0), (1, 0), (0, 1)]);
        assert_eq!(c[5], (-1, -1));
    }
}
