use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthUnit {
    Meters,
    Unscaled,
}

/// Depth interval mapped onto normalized `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
    pub unit: DepthUnit,
}

impl DepthRange {
    pub fn new(min: f64, max: f64, unit: DepthUnit) -> Result<Self> {
        let r = Self { min, max, unit };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Validation(format!(
                "depth range needs finite min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn normalize(&self, depth: f64) -> f64 {
        2.0 * (depth - self.min) / self.span() - 1.0
    }

    pub fn denormalize(&self, d: f64) -> f64 {
        self.min + (d + 1.0) / 2.0 * self.span()
    }
}

/// `H x W x 4` map (R, G, B, D), every value in `[-1, 1]`, stored
/// pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbdFrame {
    pub const CHANNELS: usize = 4;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 4 {
            return Err(Error::Dimension(format!(
                "RGBD frame {height}x{width} needs {} values, got {}",
                height * width * 4,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("RGBD value {v} outside [-1, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_planes(height: usize, width: usize, rgb: &[f32], depth: &[f32]) -> Result<Self> {
        let n = height * width;
        if rgb.len() != 3 * n || depth.len() != n {
            return Err(Error::Dimension("RGB or depth plane size mismatch".into()));
        }
        let mut data = Vec::with_capacity(4 * n);
        for i in 0..n {
            data.extend_from_slice(&rgb[3 * i..3 * i + 3]);
            data.push(depth[i]);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn depth_plane(&self) -> Vec<f32> {
        self.data.chunks_exact(4).map(|p| p[3]).collect()
    }

    /// RGB interleaved, normalized values.
    pub fn rgb_plane(&self) -> Vec<f32> {
        self.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    }

    /// RGB as 8-bit values: `round((v + 1) * 127.5)`.
    pub fn rgb_u8(&self) -> Vec<u8> {
        self.data
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|v| ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Stacks frames into an NCHW tensor `[B, 4, H, W]`.
pub fn frames_to_tensor<T: Scalar>(frames: &[&RgbdFrame]) -> Result<Tensor<T>> {
    let first = frames.first().ok_or_else(|| Error::Dimension("no frames".into()))?;
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut data = vec![T::zero(); frames.len() * 4 * plane];
    for (b, f) in frames.iter().enumerate() {
        if (f.height, f.width) != (h, w) {
            return Err(Error::Dimension("frames differ in resolution".into()));
        }
        for (i, px) in f.data.chunks_exact(4).enumerate() {
            for c in 0..4 {
                data[(b * 4 + c) * plane + i] = T::lit(px[c] as f64);
            }
        }
    }
    Tensor::new([frames.len(), 4, h, w], data)
}

/// Splits an NCHW `[B, 4, H, W]` tensor into frames.
pub fn tensor_to_frames<T: Scalar>(t: &Tensor<T>) -> Result<Vec<RgbdFrame>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 4 {
        return Err(Error::Dimension(format!("expected [B, 4, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    (0..s[0])
        .map(|b| {
            let mut data = Vec::with_capacity(4 * plane);
            for i in 0..plane {
                for c in 0..4 {
                    data.push(t.data()[(b * 4 + c) * plane + i].to_f64() as f32);
                }
            }
            RgbdFrame::new(h, w, data)
        })
        .collect()
}

/// `H x W x S` per-interval depth occupancy, pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSliceStack {
    height: usize,
    width: usize,
    slices: usize,
    data: Vec<f32>,
}

impl DepthSliceStack {
    pub fn new(height: usize, width: usize, slices: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * slices || slices == 0 {
            return Err(Error::Dimension(format!(
                "slice stack {height}x{width}x{slices} needs {} values, got {}",
                height * width * slices,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            slices,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.slices;
        &self.data[i..i + self.slices]
    }

    pub fn to_tensor<T: Scalar>(stacks: &[&DepthSliceStack]) -> Result<Tensor<T>> {
        let first = stacks.first().ok_or_else(|| Error::Dimension("no slice stacks".into()))?;
        let (h, w, s) = (first.height, first.width, first.slices);
        let plane = h * w;
        let mut data = vec![T::zero(); stacks.len() * s * plane];
        for (b, st) in stacks.iter().enumerate() {
            if (st.height, st.width, st.slices) != (h, w, s) {
                return Err(Error::Dimension("slice stacks differ in shape".into()));
            }
            for (i, px) in st.data.chunks_exact(s).enumerate() {
                for c in 0..s {
                    data[(b * s + c) * plane + i] = T::lit(px[c] as f64);
                }
            }
        }
        Tensor::new([stacks.len(), s, h, w], data)
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<DepthSliceStack>> {
        let sh = t.shape();
        if sh.len() != 4 {
            return Err(Error::Dimension(format!("expected [B, S, H, W], got {sh:?}")));
        }
        let (s, h, w) = (sh[1], sh[2], sh[3]);
        let plane = h * w;
        (0..sh[0])
            .map(|b| {
                let mut data = Vec::with_capacity(s * plane);
                for i in 0..plane {
                    for c in 0..s {
                        data.push(t.data()[(b * s + c) * plane + i].to_f64() as f32);
                    }
                }
                DepthSliceStack::new(h, w, s, data)
            })
            .collect()
    }
}
