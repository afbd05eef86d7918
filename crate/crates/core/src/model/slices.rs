//! Depth slicing: the normalized range `[-1, 1]` is cut into `S` intervals of
//! width `2 / S`. Interval `k` is `[lo_k, lo_{k+1})`, except the last one which
//! also contains `+1`.

use super::frame::DepthSliceStack;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Lower boundary of interval `k`, computed as `(2k - S) / S` so that it is
/// the correctly rounded value in `T` (for example exactly `-0.8` for k=1, S=10).
fn boundary<T: Scalar>(k: usize, slices: usize) -> T {
    T::lit((2 * k) as f64 - slices as f64) / T::lit(slices as f64)
}

/// Index of the interval holding `d`; `d` must lie in `[-1, 1]`.
pub fn slice_index<T: Scalar>(d: T, slices: usize) -> usize {
    let one = T::one();
    let guess = ((d + one) / T::lit(2.0) * T::lit(slices as f64))
        .floor()
        .to_f64()
        .clamp(0.0, (slices - 1) as f64) as usize;
    let mut k = guess;
    while k > 0 && d < boundary::<T>(k, slices) {
        k -= 1;
    }
    while k + 1 < slices && d >= boundary::<T>(k + 1, slices) {
        k += 1;
    }
    k
}

/// One-hot ground-truth slice stack for a normalized depth plane.
pub fn slice_depth<T: Scalar>(depth: &[T], height: usize, width: usize, slices: usize) -> Result<DepthSliceStack> {
    if slices < 2 {
        return Err(Error::Validation(format!("slice count must be >= 2, got {slices}")));
    }
    if depth.len() != height * width {
        return Err(Error::Dimension(format!(
            "depth plane has {} values, expected {height}x{width}",
            depth.len()
        )));
    }
    let mut data = vec![0.0f32; depth.len() * slices];
    for (i, &d) in depth.iter().enumerate() {
        if !(d >= -T::one() && d <= T::one()) {
            return Err(Error::Validation(format!("depth {d:?} at pixel {i} outside [-1, 1]")));
        }
        data[i * slices + slice_index(d, slices)] = 1.0;
    }
    DepthSliceStack::new(height, width, slices, data)
}

/// Per-pixel count of slice channels above `threshold`: 0 means no slice
/// claims the pixel, 1 is a confident pixel, 2 or more is conflicting.
pub fn confidence_map(pred: &DepthSliceStack, threshold: f32) -> Vec<u32> {
    pred.data()
        .chunks_exact(pred.slices())
        .map(|px| px.iter().filter(|&&v| v > threshold).count() as u32)
        .collect()
}

/// Midpoint of the most active interval at each pixel, in normalized units.
pub fn reconstruct_depth(stack: &DepthSliceStack) -> Vec<f64> {
    let s = stack.slices();
    stack
        .data()
        .chunks_exact(s)
        .map(|px| {
            let k = px
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            -1.0 + (2 * k + 1) as f64 / s as f64
        })
        .collect()
}
