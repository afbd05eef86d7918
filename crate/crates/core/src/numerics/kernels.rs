//! Slice-level compute kernels behind the graph ops. All buffers are dense
//! row-major NCHW. Every kernel partitions its output into disjoint chunks so
//! results do not depend on the rayon thread count.

use rayon::prelude::*;

use super::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    /// Output positions `o` along one axis for which `o * stride + k - pad`
    /// lands inside `[0, in_len)`.
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> Option<(usize, usize)> {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let k = k as isize;
        let lo = if p - k > 0 { (p - k + s - 1) / s } else { 0 };
        let hi = (in_len as isize - 1 + p - k).div_euclid(s);
        let hi = hi.min(out_len as isize - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

const TILE: usize = 16;

/// `dst[m, p] += sum_r w[m, r] * src[r, p]` for `w: [M, R]`, `src: [R, plane]`.
/// Column tiles of `src` stay cache-resident while every output row consumes
/// them, and each output tile accumulates in registers.
fn gemm<T: Scalar>(w: &[T], reduce: usize, src: &[T], plane: usize, dst: &mut [T]) {
    let m = dst.len() / plane;
    let mut p0 = 0;
    while p0 < plane {
        let n = TILE.min(plane - p0);
        for row in 0..m {
            let wr = &w[row * reduce..][..reduce];
            let mut acc = [T::zero(); TILE];
            if n == TILE {
                for (r, &wv) in wr.iter().enumerate() {
                    let s = &src[r * plane + p0..][..TILE];
                    for l in 0..TILE {
                        acc[l] = acc[l] + wv * s[l];
                    }
                }
            } else {
                for (r, &wv) in wr.iter().enumerate() {
                    let s = &src[r * plane + p0..][..n];
                    for l in 0..n {
                        acc[l] = acc[l] + wv * s[l];
                    }
                }
            }
            for (d, a) in dst[row * plane + p0..][..n].iter_mut().zip(&acc) {
                *d = *d + *a;
            }
        }
        p0 += n;
    }
}

/// Unfolds one sample into `[C * Kh * Kw, oh * ow]` patch columns, zero where
/// the window falls into the padding.
fn im2col<T: Scalar>(src: &[T], g: &ConvGeometry, col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane_in = g.in_h * g.in_w;
    let plane_out = oh * ow;
    col.fill(T::zero());
    for c in 0..g.in_channels {
        let chan = &src[c * plane_in..][..plane_in];
        for i in 0..g.kernel_h {
            let Some((y0, y1)) = g.valid_range(i, g.in_h, oh) else {
                continue;
            };
            for j in 0..g.kernel_w {
                let Some((x0, x1)) = g.valid_range(j, g.in_w, ow) else {
                    continue;
                };
                let dst = &mut col[((c * g.kernel_h + i) * g.kernel_w + j) * plane_out..][..plane_out];
                for y in y0..=y1 {
                    let row = &chan[(y * g.stride + i - g.pad) * g.in_w..][..g.in_w];
                    let out = &mut dst[y * ow..][..ow];
                    if g.stride == 1 {
                        let ix0 = x0 + j - g.pad;
                        out[x0..=x1].copy_from_slice(&row[ix0..ix0 + x1 + 1 - x0]);
                    } else {
                        for x in x0..=x1 {
                            out[x] = row[x * g.stride + j - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch columns back into one sample.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, dst: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane_in = g.in_h * g.in_w;
    let plane_out = oh * ow;
    for c in 0..g.in_channels {
        let chan = &mut dst[c * plane_in..][..plane_in];
        for i in 0..g.kernel_h {
            let Some((y0, y1)) = g.valid_range(i, g.in_h, oh) else {
                continue;
            };
            for j in 0..g.kernel_w {
                let Some((x0, x1)) = g.valid_range(j, g.in_w, ow) else {
                    continue;
                };
                let src = &col[((c * g.kernel_h + i) * g.kernel_w + j) * plane_out..][..plane_out];
                for y in y0..=y1 {
                    let row = &mut chan[(y * g.stride + i - g.pad) * g.in_w..][..g.in_w];
                    let part = &src[y * ow..][..ow];
                    if g.stride == 1 {
                        let ix0 = x0 + j - g.pad;
                        axpy(T::one(), &part[x0..=x1], &mut row[ix0..ix0 + x1 + 1 - x0]);
                    } else {
                        for x in x0..=x1 {
                            let ix = x * g.stride + j - g.pad;
                            row[ix] = row[ix] + part[x];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation: `out[b,o,y,x] = sum_{c,i,j} k[o,c,i,j] * in[b,c,y*s+i-p,x*s+j-p]`.
pub fn conv2d_forward<T: Scalar>(input: &[T], kernel: &[T], g: &ConvGeometry) -> Vec<T> {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h() * g.out_w();
    let rows = g.in_channels * g.kernel_h * g.kernel_w;
    let sample_in = g.in_channels * plane_in;
    let mut out = vec![T::zero(); g.batch * g.out_channels * plane_out];
    out.par_chunks_mut(g.out_channels * plane_out)
        .enumerate()
        .for_each(|(b, dst)| {
            let mut col = vec![T::zero(); rows * plane_out];
            im2col(&input[b * sample_in..][..sample_in], g, &mut col);
            gemm(kernel, rows, &col, plane_out, dst);
        });
    out
}

/// Adjoint of [`conv2d_forward`] with respect to its input.
pub fn conv2d_backward_input<T: Scalar>(grad_out: &[T], kernel: &[T], g: &ConvGeometry) -> Vec<T> {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h() * g.out_w();
    let rows = g.in_channels * g.kernel_h * g.kernel_w;
    let sample_out = g.out_channels * plane_out;
    let mut kernel_t = vec![T::zero(); rows * g.out_channels];
    for o in 0..g.out_channels {
        for r in 0..rows {
            kernel_t[r * g.out_channels + o] = kernel[o * rows + r];
        }
    }
    let mut grad_in = vec![T::zero(); g.batch * g.in_channels * plane_in];
    grad_in
        .par_chunks_mut(g.in_channels * plane_in)
        .enumerate()
        .for_each(|(b, dst)| {
            let mut col = vec![T::zero(); rows * plane_out];
            gemm(&kernel_t, g.out_channels, &grad_out[b * sample_out..][..sample_out], plane_out, &mut col);
            col2im(&col, g, dst);
        });
    grad_in
}

/// Gradient of [`conv2d_forward`] with respect to its kernel.
pub fn conv2d_backward_kernel<T: Scalar>(input: &[T], grad_out: &[T], g: &ConvGeometry) -> Vec<T> {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h() * g.out_w();
    let rows = g.in_channels * g.kernel_h * g.kernel_w;
    let sample_in = g.in_channels * plane_in;
    let sample_out = g.out_channels * plane_out;
    // Accumulated as [rows, O] so each unfolded row is read once per sample.
    let mut grad_t = vec![T::zero(); rows * g.out_channels];
    let mut col = vec![T::zero(); rows * plane_out];
    for b in 0..g.batch {
        im2col(&input[b * sample_in..][..sample_in], g, &mut col);
        let go = &grad_out[b * sample_out..][..sample_out];
        grad_t
            .par_chunks_mut(g.out_channels)
            .zip(col.par_chunks(plane_out))
            .for_each(|(acc, crow)| {
                for (o, a) in acc.iter_mut().enumerate() {
                    *a = *a + dot(&go[o * plane_out..][..plane_out], crow);
                }
            });
    }
    let mut grad_k = vec![T::zero(); g.out_channels * rows];
    for r in 0..rows {
        for o in 0..g.out_channels {
            grad_k[o * rows + r] = grad_t[r * g.out_channels + o];
        }
    }
    grad_k
}

/// `out[b, o] = sum_i x[b, i] * w[i, o]`.
pub fn matmul<T: Scalar>(x: &[T], w: &[T], batch: usize, inner: usize, outer: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * outer];
    out.par_chunks_mut(outer).enumerate().for_each(|(b, row)| {
        for i in 0..inner {
            axpy(x[b * inner + i], &w[i * outer..][..outer], row);
        }
    });
    out
}

/// Returns `(grad_x, grad_w)` for `out = x w`.
pub fn matmul_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad_out: &[T],
    batch: usize,
    inner: usize,
    outer: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); batch * inner];
    gx.par_chunks_mut(inner).enumerate().for_each(|(b, row)| {
        let go = &grad_out[b * outer..][..outer];
        for (i, v) in row.iter_mut().enumerate() {
            *v = dot(go, &w[i * outer..][..outer]);
        }
    });
    let mut gw = vec![T::zero(); inner * outer];
    gw.par_chunks_mut(outer).enumerate().for_each(|(i, row)| {
        for b in 0..batch {
            axpy(x[b * inner + i], &grad_out[b * outer..][..outer], row);
        }
    });
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(h: usize, k: usize, s: usize, p: usize) -> ConvGeometry {
        ConvGeometry {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            in_h: h,
            in_w: h,
            kernel_h: k,
            kernel_w: k,
            stride: s,
            pad: p,
        }
    }

    #[test]
    fn valid_range_matches_enumeration() {
        for (h, k, s, p) in [(5, 3, 1, 1), (6, 4, 2, 1), (7, 3, 2, 0), (4, 4, 2, 2)] {
            let g = geometry(h, k, s, p);
            let oh = g.out_h();
            for kk in 0..k {
                let brute: Vec<usize> = (0..oh)
                    .filter(|&o| {
                        let i = (o * s + kk) as isize - p as isize;
                        i >= 0 && (i as usize) < h
                    })
                    .collect();
                let got = g
                    .valid_range(kk, h, oh)
                    .map(|(a, b)| (a..=b).collect::<Vec<_>>())
                    .unwrap_or_default();
                assert_eq!(got, brute, "h={h} k={k} s={s} p={p} kk={kk}");
            }
        }
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..13).map(|v| v as f64).collect();
        let b = vec![2.0; 13];
        assert_eq!(dot(&a, &b), 2.0 * 78.0);
    }
}
