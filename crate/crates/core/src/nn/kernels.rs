//! Direct CPU kernels, generic over the compute float type.
//!
//! All tensors are NCHW (or NF for linear layers), row-major. NaN and
//! infinity pass through every kernel unchanged in kind: ReLU and max-pool
//! keep NaN, arithmetic propagates it.

use std::ops::{Add, Mul};

use num_traits::{Float, Zero};

/// Element types a multiply-accumulate kernel can run on (floats and `i32`).
pub trait Mac: Copy + Zero + Add<Output = Self> + Mul<Output = Self> + Send + Sync {}

impl<T: Copy + Zero + Add<Output = T> + Mul<Output = T> + Send + Sync> Mac for T {}

pub trait Real: Float + Send + Sync + std::iter::Sum + 'static {
    fn from_f64_lossy(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }
}

/// Output columns `ow` for which `ow * stride + kw - padding` lands inside `[0, w)`.
#[inline]
fn valid_range(out: usize, w: usize, kw: usize, stride: usize, padding: usize) -> (usize, usize) {
    // first ow with ow*stride + kw >= padding
    let lo = if kw >= padding {
        0
    } else {
        (padding - kw).div_ceil(stride)
    };
    // last ow with ow*stride + kw - padding <= w - 1
    let limit = w + padding;
    let hi = if kw >= limit {
        0
    } else {
        ((limit - 1 - kw) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

/// 2-D convolution (cross-correlation) with optional bias. Padding reads as zero.
pub fn conv2d<R: Mac>(
    input: &[R],
    (n, h, w): (usize, usize, usize),
    weight: &[R],
    bias: Option<&[R]>,
    g: Conv2dGeometry,
) -> (Vec<R>, usize, usize) {
    let (oh, ow) = g.output_hw(h, w).expect("conv geometry checked at load");
    debug_assert_eq!(input.len(), n * g.in_channels * h * w);
    debug_assert_eq!(
        weight.len(),
        g.out_channels * g.in_channels * g.kernel * g.kernel
    );
    if g.stride == 1 {
        (
            conv2d_unit_stride(input, (n, h, w), weight, bias, g, (oh, ow)),
            oh,
            ow,
        )
    } else {
        (
            conv2d_strided(input, (n, h, w), weight, bias, g, (oh, ow)),
            oh,
            ow,
        )
    }
}

/// Stride 1: each input plane is copied into a zero-padded buffer of row
/// length `pw`, and every kernel tap becomes one contiguous multiply-add
/// over `oh * pw` positions. Columns `ow..pw` of each row are discarded.
fn conv2d_unit_stride<R: Mac>(
    input: &[R],
    (n, h, w): (usize, usize, usize),
    weight: &[R],
    bias: Option<&[R]>,
    g: Conv2dGeometry,
    (oh, ow): (usize, usize),
) -> Vec<R> {
    let (c, oc, k, p) = (g.in_channels, g.out_channels, g.kernel, g.padding);
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    // Trailing k - 1 zeros keep the last taps of the last row in bounds.
    let plane_len = ph * pw + k - 1;
    let span = oh * pw;
    let mut padded = vec![R::zero(); c * plane_len];
    let mut acc = vec![R::zero(); span];
    let mut out = Vec::with_capacity(n * oc * oh * ow);
    for img in 0..n {
        let x = &input[img * c * h * w..(img + 1) * c * h * w];
        for ci in 0..c {
            let dst = &mut padded[ci * plane_len..(ci + 1) * plane_len];
            for r in 0..h {
                let row = &x[(ci * h + r) * w..(ci * h + r + 1) * w];
                dst[(r + p) * pw + p..(r + p) * pw + p + w].copy_from_slice(row);
            }
        }
        for o in 0..oc {
            acc.iter_mut().for_each(|v| *v = R::zero());
            for ci in 0..c {
                let src = &padded[ci * plane_len..(ci + 1) * plane_len];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = weight[((o * c + ci) * k + kh) * k + kw];
                        let shifted = &src[kh * pw + kw..kh * pw + kw + span];
                        for (a, &xv) in acc.iter_mut().zip(shifted) {
                            *a = *a + wv * xv;
                        }
                    }
                }
            }
            let b = bias.map_or(R::zero(), |b| b[o]);
            for r in 0..oh {
                out.extend(acc[r * pw..r * pw + ow].iter().map(|&v| b + v));
            }
        }
    }
    out
}

fn conv2d_strided<R: Mac>(
    input: &[R],
    (n, h, w): (usize, usize, usize),
    weight: &[R],
    bias: Option<&[R]>,
    g: Conv2dGeometry,
    (oh, ow): (usize, usize),
) -> Vec<R> {
    let (c, oc, k, s, p) = (g.in_channels, g.out_channels, g.kernel, g.stride, g.padding);
    let mut out = vec![R::zero(); n * oc * oh * ow];
    let col_ranges: Vec<(usize, usize)> = (0..k).map(|kw| valid_range(ow, w, kw, s, p)).collect();
    for img in 0..n {
        let x = &input[img * c * h * w..(img + 1) * c * h * w];
        for o in 0..oc {
            let plane = &mut out[(img * oc + o) * oh * ow..(img * oc + o + 1) * oh * ow];
            let mut acc = vec![R::zero(); oh * ow];
            for ci in 0..c {
                let xc = &x[ci * h * w..(ci + 1) * h * w];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = weight[((o * c + ci) * k + kh) * k + kw];
                        let (lo, hi) = col_ranges[kw];
                        for r in 0..oh {
                            let ih = (r * s + kh) as isize - p as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let row_in = &xc[ih as usize * w..(ih as usize + 1) * w];
                            for col in lo..hi {
                                let iw = col * s + kw - p;
                                acc[r * ow + col] = acc[r * ow + col] + wv * row_in[iw];
                            }
                        }
                    }
                }
            }
            let b = bias.map_or(R::zero(), |b| b[o]);
            for (d, a) in plane.iter_mut().zip(acc) {
                *d = b + a;
            }
        }
    }
    out
}

/// Inference-mode batch normalisation over channel planes of size `hw`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<R: Real>(
    input: &[R],
    channels: usize,
    hw: usize,
    gamma: &[R],
    beta: &[R],
    mean: &[R],
    var: &[R],
    eps: f64,
) -> Vec<R> {
    let eps = R::from_f64_lossy(eps);
    let scale: Vec<R> = (0..channels)
        .map(|c| gamma[c] / (var[c] + eps).sqrt())
        .collect();
    let mut out = Vec::with_capacity(input.len());
    for (i, plane) in input.chunks_exact(hw).enumerate() {
        let c = i % channels;
        let (m, sc, b) = (mean[c], scale[c], beta[c]);
        out.extend(plane.iter().map(|&x| (x - m) * sc + b));
    }
    out
}

#[inline]
pub fn relu<R: Real>(x: R) -> R {
    // NaN compares false and passes through.
    if x < R::zero() {
        R::zero()
    } else {
        x
    }
}

pub fn relu_in_place<R: Real>(v: &mut [R]) {
    v.iter_mut().for_each(|x| *x = relu(*x));
}

/// Max-pool without padding. A NaN anywhere in a window yields NaN.
pub fn maxpool2d<R: Float>(
    input: &[R],
    (planes, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
) -> (Vec<R>, usize, usize) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    for plane in input.chunks_exact(h * w).take(planes) {
        for r in 0..oh {
            for col in 0..ow {
                let mut m = R::neg_infinity();
                for kh in 0..kernel {
                    let row = &plane[(r * stride + kh) * w + col * stride..][..kernel];
                    for &v in row {
                        if v > m || v.is_nan() {
                            m = v;
                        }
                        if m.is_nan() {
                            break;
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    (out, oh, ow)
}

/// Max-pool over totally ordered values (quantized activations).
pub fn maxpool2d_ord<T: Ord + Copy>(
    input: &[T],
    (planes, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
) -> (Vec<T>, usize, usize) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    for plane in input.chunks_exact(h * w).take(planes) {
        for r in 0..oh {
            for col in 0..ow {
                let m = (0..kernel)
                    .flat_map(|kh| plane[(r * stride + kh) * w + col * stride..][..kernel].iter())
                    .copied()
                    .max()
                    .expect("kernel is non-empty");
                out.push(m);
            }
        }
    }
    (out, oh, ow)
}

/// `y = W x + b` for each of `n` rows; `weight` is `out x in`.
pub fn linear<R: Mac>(
    input: &[R],
    n: usize,
    weight: &[R],
    bias: Option<&[R]>,
    in_features: usize,
    out_features: usize,
) -> Vec<R> {
    let mut out = Vec::with_capacity(n * out_features);
    for x in input.chunks_exact(in_features).take(n) {
        for o in 0..out_features {
            let row = &weight[o * in_features..(o + 1) * in_features];
            let mut acc = bias.map_or(R::zero(), |b| b[o]);
            for (&wv, &xv) in row.iter().zip(x) {
                acc = acc + wv * xv;
            }
            out.push(acc);
        }
    }
    out
}

/// Index of the largest non-NaN value; ties go to the lowest index.
/// Returns 0 when every value is NaN.
pub fn argmax<R: Real>(row: &[R]) -> usize {
    let mut best = 0;
    let mut best_v: Option<R> = None;
    for (i, &v) in row.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best_v.is_none_or(|b| v > b) {
            best = i;
            best_v = Some(v);
        }
    }
    best
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_ord<T: Ord + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
