//! Forward and backward kernels. All tensors are flat, channel-major slices;
//! convolutions are 3-wide with padding 1.

use super::Scalar;

/// Valid output range for one kernel tap so that `o + tap - 1` stays inside
/// `[0, len)`.
#[inline]
fn tap_range(tap: usize, len: usize) -> (usize, usize) {
    let lo = if tap == 0 { 1 } else { 0 };
    let hi = if tap == 2 { len.saturating_sub(1) } else { len };
    (lo, hi)
}

/// 3x3 convolution, stride 1, padding 1. `weight` is `[cout][cin][3][3]`.
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); cout * plane];
    for co in 0..cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, h);
                for kx in 0..3 {
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let (x0, x1) = tap_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    grad_out: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    let plane = h * w;
    for co in 0..cout {
        let g = &grad_out[co * plane..(co + 1) * plane];
        grad_b[co] += g.iter().copied().sum::<T>();
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, h);
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let (x0, x1) = tap_range(kx, w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let gr = &g[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (&gv, &sv) in gr.iter().zip(s) {
                            acc += gv * sv;
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let dst = &mut gi[ci * plane + sy * w + x0 + kx - 1..ci * plane + sy * w + x1 + kx - 1];
                            for (dv, &gv) in dst.iter_mut().zip(gr) {
                                *dv += wv * gv;
                            }
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
}

pub fn conv1d_out_len(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// Width-3 1-D convolution with padding 1 and the given stride.
/// `input` is `[cin][len]`, `weight` is `[cout][cin][3]`.
pub fn conv1d_forward<T: Scalar>(
    input: &[T],
    cin: usize,
    len: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    stride: usize,
) -> Vec<T> {
    let out_len = conv1d_out_len(len, stride);
    let mut out = vec![T::zero(); cout * out_len];
    for co in 0..cout {
        let dst = &mut out[co * out_len..(co + 1) * out_len];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let src = &input[ci * len..(ci + 1) * len];
            for k in 0..3 {
                let wv = weight[(co * cin + ci) * 3 + k];
                for (t, dv) in dst.iter_mut().enumerate() {
                    let pos = t * stride + k;
                    if pos >= 1 && pos - 1 < len {
                        *dv += wv * src[pos - 1];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    input: &[T],
    grad_out: &[T],
    cin: usize,
    len: usize,
    weight: &[T],
    cout: usize,
    stride: usize,
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_in: &mut [T],
) {
    let out_len = conv1d_out_len(len, stride);
    for co in 0..cout {
        let g = &grad_out[co * out_len..(co + 1) * out_len];
        grad_b[co] += g.iter().copied().sum::<T>();
        for ci in 0..cin {
            let src = &input[ci * len..(ci + 1) * len];
            let gi = &mut grad_in[ci * len..(ci + 1) * len];
            for k in 0..3 {
                let widx = (co * cin + ci) * 3 + k;
                let wv = weight[widx];
                let mut acc = T::zero();
                for (t, &gv) in g.iter().enumerate() {
                    let pos = t * stride + k;
                    if pos >= 1 && pos - 1 < len {
                        acc += gv * src[pos - 1];
                        gi[pos - 1] += wv * gv;
                    }
                }
                grad_w[widx] += acc;
            }
        }
    }
}

/// 2x2 max pooling, stride 2. Returns the pooled tensor and, per output, the
/// flat input index that won (first maximum in scan order).
pub fn maxpool_forward<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(grad_out: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut g = vec![T::zero(); input_len];
    for (&gv, &i) in grad_out.iter().zip(argmax) {
        g[i as usize] += gv;
    }
    g
}

/// `out = W x + b`, `W` is `[out][in]`.
pub fn dense_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], out_dim: usize) -> Vec<T> {
    let in_dim = input.len();
    (0..out_dim)
        .map(|o| {
            let row = &weight[o * in_dim..(o + 1) * in_dim];
            bias[o] + row.iter().zip(input).map(|(&a, &b)| a * b).sum::<T>()
        })
        .collect()
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn dense_backward<T: Scalar>(
    input: &[T],
    grad_out: &[T],
    weight: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
) -> Vec<T> {
    let in_dim = input.len();
    let mut gin = vec![T::zero(); in_dim];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        grad_b[o] += g;
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] += g * input[i];
            gin[i] += g * row[i];
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive zero-padded 3x3 convolution.
    fn conv2d_naive(input: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wt[((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * input[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn seq(n: usize, k: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * k).sin() * 1.7).fract()).collect()
    }

    #[test]
    fn conv2d_matches_naive() {
        let (cin, cout, h, w) = (2, 3, 5, 4);
        let x = seq(cin * h * w, 0.37);
        let wt = seq(cout * cin * 9, 1.3);
        let b = vec![0.1, -0.2, 0.3];
        let a = conv2d_forward(&x, cin, h, w, &wt, &b, cout);
        let n = conv2d_naive(&x, cin, h, w, &wt, &b, cout);
        for (p, q) in a.iter().zip(&n) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_strided_shape_and_values() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let w = vec![1.0, 10.0, 100.0];
        let out = conv1d_forward(&x, 1, 4, &w, &[0.0], 1, 2);
        // t=0 covers [pad, x0, x1]; t=1 covers [x1, x2, x3].
        assert_eq!(out, vec![10.0 + 200.0, 2.0 + 30.0 + 400.0]);
        assert_eq!(conv1d_out_len(64, 2), 32);
        assert_eq!(conv1d_out_len(448, 1), 448);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0];
        let (out, arg) = maxpool_forward(&x, 1, 2, 4);
        assert_eq!(out, vec![5.0, 9.0]);
        let g = maxpool_backward(&[1.0, 2.0], &arg, 8);
        assert_eq!(g, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
