//! Batched layer kernels.
//!
//! Activations are stored channel-major across the whole batch:
//! `[channel][sample][row][col]`, so one GEMM covers a full convolution.

use crate::scalar::Scalar;

/// Geometry of a 3x3, stride-1, zero-padded convolution over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub batch: usize,
    pub size: usize,
}

impl ConvShape {
    pub fn k(&self) -> usize {
        self.in_channels * 9
    }

    pub fn n(&self) -> usize {
        self.batch * self.size * self.size
    }
}

/// Unfold 3x3 neighbourhoods: `cols[(ci*3+ky)*3+kx][b*s*s + y*s + x]`.
pub(crate) fn im2col<T: Scalar>(input: &[T], shape: ConvShape, cols: &mut [T]) {
    let s = shape.size;
    let plane = s * s;
    let n = shape.n();
    debug_assert_eq!(input.len(), shape.in_channels * n);
    debug_assert_eq!(cols.len(), shape.k() * n);
    for ci in 0..shape.in_channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for b in 0..shape.batch {
                    let src_plane = &input[(ci * shape.batch + b) * plane..][..plane];
                    for y in 0..s {
                        let dst = &mut row[b * plane + y * s..][..s];
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= s as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &src_plane[sy as usize * s..][..s];
                        match kx {
                            0 => {
                                dst[0] = T::zero();
                                dst[1..].copy_from_slice(&src[..s - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..s - 1].copy_from_slice(&src[1..]);
                                dst[s - 1] = T::zero();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
pub(crate) fn col2im<T: Scalar>(cols: &[T], shape: ConvShape, out: &mut [T]) {
    let s = shape.size;
    let plane = s * s;
    let n = shape.n();
    out.fill(T::zero());
    for ci in 0..shape.in_channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for b in 0..shape.batch {
                    let dst_plane = &mut out[(ci * shape.batch + b) * plane..][..plane];
                    for y in 0..s {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= s as isize {
                            continue;
                        }
                        let src = &row[b * plane + y * s..][..s];
                        let dst = &mut dst_plane[sy as usize * s..][..s];
                        match kx {
                            0 => {
                                for x in 1..s {
                                    dst[x - 1] += src[x];
                                }
                            }
                            1 => {
                                for x in 0..s {
                                    dst[x] += src[x];
                                }
                            }
                            _ => {
                                for x in 0..s - 1 {
                                    dst[x + 1] += src[x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out = relu(weight * cols + bias)`; `out` is `out_channels x n`.
pub(crate) fn conv_forward<T: Scalar>(weight: &[T], bias: &[T], cols: &[T], shape: ConvShape, out: &mut [T]) {
    let (m, k, n) = (shape.out_channels, shape.k(), shape.n());
    T::gemm(m, k, n, T::one(), weight, k as isize, 1, cols, n as isize, 1, T::zero(), out, n as isize, 1);
    for (row, &b) in out.chunks_exact_mut(n).zip(bias) {
        for v in row {
            let z = *v + b;
            *v = if z < T::zero() { T::zero() } else { z };
        }
    }
}

/// Gradients of a convolution given `dz` (already masked by the ReLU).
///
/// Writes weight and bias gradients; returns input-column gradients when asked.
pub(crate) fn conv_backward<T: Scalar>(
    weight: &[T],
    cols: &[T],
    dz: &[T],
    shape: ConvShape,
    dweight: &mut [T],
    dbias: &mut [T],
    dcols: Option<&mut [T]>,
) {
    let (m, k, n) = (shape.out_channels, shape.k(), shape.n());
    // dW = dz (m x n) * cols^T (n x k)
    T::gemm(m, n, k, T::one(), dz, n as isize, 1, cols, 1, n as isize, T::zero(), dweight, k as isize, 1);
    for (db, row) in dbias.iter_mut().zip(dz.chunks_exact(n)) {
        *db = row.iter().copied().sum();
    }
    if let Some(dcols) = dcols {
        // dcols = W^T (k x m) * dz (m x n)
        T::gemm(k, m, n, T::one(), weight, 1, k as isize, dz, n as isize, 1, T::zero(), dcols, n as isize, 1);
    }
}

/// 2x2 max pooling (floor) over `planes` planes of side `s`.
///
/// Returns pooled values and, per output, the flat index of the winning input.
pub(crate) fn maxpool_forward<T: Scalar>(input: &[T], planes: usize, s: usize) -> (Vec<T>, Vec<u32>) {
    let h = s / 2;
    let mut out = Vec::with_capacity(planes * h * h);
    let mut idx = Vec::with_capacity(planes * h * h);
    for p in 0..planes {
        let base = p * s * s;
        for y in 0..h {
            for x in 0..h {
                let mut best = base + 2 * y * s + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * s + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub(crate) fn maxpool_backward<T: Scalar>(dout: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (&g, &i) in dout.iter().zip(idx) {
        din[i as usize] += g;
    }
    din
}

/// Mean over each plane: `planes` planes of `plane` elements.
pub(crate) fn global_avg_pool<T: Scalar>(input: &[T], plane: usize) -> Vec<T> {
    let inv = T::one() / T::from_f64_lossy(plane as f64);
    input.chunks_exact(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect()
}

pub(crate) fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for random x and c
        let shape = ConvShape {
            in_channels: 2,
            out_channels: 1,
            batch: 3,
            size: 5,
        };
        let x: Vec<f64> = (0..2 * 3 * 25).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let c: Vec<f64> = (0..shape.k() * shape.n()).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, shape, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, shape, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let shape = ConvShape {
            in_channels: 2,
            out_channels: 3,
            batch: 2,
            size: 4,
        };
        let s = 4usize;
        let x: Vec<f64> = (0..2 * 2 * 16).map(|i| ((i * 7 % 5) as f64) * 0.3 - 0.5).collect();
        let w: Vec<f64> = (0..3 * 18).map(|i| ((i * 11 % 9) as f64) * 0.1 - 0.4).collect();
        let bias = vec![0.05, -0.1, 0.2];
        let mut cols = vec![0.0; shape.k() * shape.n()];
        im2col(&x, shape, &mut cols);
        let mut out = vec![0.0; 3 * shape.n()];
        conv_forward(&w, &bias, &cols, shape, &mut out);
        for co in 0..3 {
            for b in 0..2 {
                for y in 0..s {
                    for xx in 0..s {
                        let mut acc = bias[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                    if (0..s as isize).contains(&sy) && (0..s as isize).contains(&sx) {
                                        acc += w[co * 18 + ci * 9 + ky * 3 + kx]
                                            * x[(ci * 2 + b) * 16 + sy as usize * s + sx as usize];
                                    }
                                }
                            }
                        }
                        let got = out[co * shape.n() + b * 16 + y * s + xx];
                        assert!((got - acc.max(0.0)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let input = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 9.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5f64];
        let (out, idx) = maxpool_forward(&input, 1, 4);
        assert_eq!(out, vec![5.0, 9.0, 0.5, 0.5]);
        let din = maxpool_backward(&[1.0, 2.0, 3.0, 4.0], &idx, 16);
        assert_eq!(din[1], 1.0);
        assert_eq!(din[7], 2.0);
        assert_eq!(din.iter().sum::<f64>(), 10.0);
    }
}
