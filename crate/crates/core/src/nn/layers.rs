//! Convolution and the parameter-free layers of the encoder-decoder, each
//! with a hand-written backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::resample::bilinear_taps;

/// Square convolution with stride 1 and "same" zero padding (`k` odd).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out x (in * k * k)`, matching the `[out, in, k, k]` layout.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        Self {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }
}

// C = alpha * A(m x k) * B(k x n) + beta * C, all with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views that lie inside the given slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid std");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: (0..out_channels * fan_in).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Tensor) -> Vec<f32> {
        let (h, w, k) = (x.height, x.width, self.kernel);
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0f32; self.patch_len() * hw];
        for c in 0..x.channels {
            let plane = x.channel(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        let dst = &mut row[y * w..][..w];
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx.max(0)) as usize;
                        if x_lo < x_hi {
                            let s0 = (x_lo as isize + dx) as usize;
                            dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize) -> Tensor {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = Tensor::zeros(self.in_channels, h, w);
        for c in 0..self.in_channels {
            let plane = &mut out.data[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx.max(0)) as usize;
                        if x_lo >= x_hi {
                            continue;
                        }
                        let s0 = (x_lo as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + s0..][..x_hi - x_lo];
                        for (d, s) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let hw = x.plane_len();
        let owned;
        let cols: &[f32] = if self.kernel == 1 {
            &x.data
        } else {
            owned = self.im2col(x);
            &owned
        };
        let mut out = Tensor::zeros(self.out_channels, x.height, x.width);
        for (c, b) in self.bias.iter().enumerate() {
            out.data[c * hw..(c + 1) * hw].fill(*b);
        }
        let kk = self.patch_len();
        gemm(
            self.out_channels,
            kk,
            hw,
            &self.weight,
            (kk as isize, 1),
            cols,
            (hw as isize, 1),
            1.0,
            &mut out.data,
        );
        out
    }

    /// Accumulates parameter gradients and returns the input gradient if asked.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut ConvGrad, need_dx: bool) -> Option<Tensor> {
        let hw = x.plane_len();
        let kk = self.patch_len();
        let owned;
        let cols: &[f32] = if self.kernel == 1 {
            &x.data
        } else {
            owned = self.im2col(x);
            &owned
        };
        for (c, gb) in grad.bias.iter_mut().enumerate() {
            *gb += dy.data[c * hw..(c + 1) * hw].iter().sum::<f32>();
        }
        // dW (out x kk) += dY (out x hw) * cols^T (hw x kk)
        gemm(
            self.out_channels,
            hw,
            kk,
            &dy.data,
            (hw as isize, 1),
            cols,
            (1, hw as isize),
            1.0,
            &mut grad.weight,
        );
        if !need_dx {
            return None;
        }
        // dcols (kk x hw) = W^T (kk x out) * dY (out x hw)
        let mut dcols = vec![0.0f32; kk * hw];
        gemm(
            kk,
            self.out_channels,
            hw,
            &self.weight,
            (1, kk as isize),
            &dy.data,
            (hw as isize, 1),
            0.0,
            &mut dcols,
        );
        if self.kernel == 1 {
            return Some(Tensor::from_data(self.in_channels, x.height, x.width, dcols));
        }
        Some(self.col2im(&dcols, x.height, x.width))
    }
}

/// Normalizes every channel of one frame to zero mean and unit variance,
/// then applies a learned per-channel scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct NormGrad {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl NormGrad {
    pub fn zeros_like(norm: &InstanceNorm) -> Self {
        Self {
            gamma: vec![0.0; norm.gamma.len()],
            beta: vec![0.0; norm.beta.len()],
        }
    }
}

/// Forward quantities needed by [`InstanceNorm::backward`].
#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Tensor,
    inv_std: Vec<f32>,
}

const NORM_EPS: f64 = 1e-5;

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, NormCache) {
        assert_eq!(x.channels, self.channels(), "norm channels");
        let hw = x.plane_len();
        let mut normalized = x.clone();
        let mut out = Tensor::zeros(x.channels, x.height, x.width);
        let mut inv_std = Vec::with_capacity(x.channels);
        for c in 0..x.channels {
            let plane = &mut normalized.data[c * hw..(c + 1) * hw];
            let mean = plane.iter().map(|v| f64::from(*v)).sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (f64::from(*v) - mean).powi(2)).sum::<f64>() / hw as f64;
            let inv = (1.0 / (var + NORM_EPS).sqrt()) as f32;
            let mean = mean as f32;
            let (g, b) = (self.gamma[c], self.beta[c]);
            for (n, o) in plane.iter_mut().zip(&mut out.data[c * hw..(c + 1) * hw]) {
                *n = (*n - mean) * inv;
                *o = g * *n + b;
            }
            inv_std.push(inv);
        }
        (out, NormCache { normalized, inv_std })
    }

    /// Accumulates `gamma`/`beta` gradients and returns the input gradient.
    pub fn backward(&self, cache: &NormCache, dy: &Tensor, grad: &mut NormGrad) -> Tensor {
        let hw = dy.plane_len();
        let n = hw as f32;
        let mut dx = Tensor::zeros(dy.channels, dy.height, dy.width);
        for c in 0..dy.channels {
            let xh = &cache.normalized.data[c * hw..(c + 1) * hw];
            let g = &dy.data[c * hw..(c + 1) * hw];
            let sum_g: f32 = g.iter().sum();
            let sum_gx: f32 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            grad.beta[c] += sum_g;
            grad.gamma[c] += sum_gx;
            let k = self.gamma[c] * cache.inv_std[c] / n;
            for ((d, gi), xi) in dx.data[c * hw..(c + 1) * hw].iter_mut().zip(g).zip(xh) {
                *d = flush_subnormal(k * (n * gi - sum_g - xi * sum_gx));
            }
        }
        dx
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

pub const LEAKY_SLOPE: f32 = 0.01;

pub fn leaky_relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Scales `dy` where the leaky ReLU output was negative.
pub fn leaky_relu_backward(dy: &mut Tensor, out: &Tensor) {
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        if *y < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// Masks `dy` where the post-activation output was not positive.
pub fn relu_backward(dy: &mut Tensor, out: &Tensor) {
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the output and the flat input index of every maximum.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    let mut idx = vec![0u32; x.channels * oh * ow];
    for c in 0..x.channels {
        let base = c * x.plane_len();
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * x.width + 2 * xx + dx;
                    if x.data[i] > best {
                        best = x.data[i];
                        best_i = i;
                    }
                }
                let o = (c * oh + y) * ow + xx;
                out.data[o] = best;
                idx[o] = best_i as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(dy: &Tensor, idx: &[u32], input_shape: (usize, usize, usize)) -> Tensor {
    let mut dx = Tensor::zeros(input_shape.0, input_shape.1, input_shape.2);
    for (g, i) in dy.data.iter().zip(idx) {
        dx.data[*i as usize] += g;
    }
    dx
}

/// Bilinear upsampling by exactly 2 in both directions.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.height * 2, x.width * 2);
    let ty = bilinear_taps(x.height, oh);
    let tx = bilinear_taps(x.width, ow);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (r0, r1) = (&src[y0 * x.width..], &src[y1 * x.width..]);
            let (wy0, wy1) = (wy0 as f32, wy1 as f32);
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (wx0 as f32, wx1 as f32);
                dst[oy * ow + ox] =
                    wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let ty = bilinear_taps(h, dy.height);
    let tx = bilinear_taps(w, dy.width);
    let mut dx = Tensor::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        let g = dy.channel(c);
        let dst = &mut dx.data[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (wy0 as f32, wy1 as f32);
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = g[oy * dy.width + ox];
                let (wx0, wx1) = (wx0 as f32, wx1 as f32);
                dst[y0 * w + x0] += v * wy0 * wx0;
                dst[y0 * w + x1] += v * wy0 * wx1;
                dst[y1 * w + x0] += v * wy1 * wx0;
                dst[y1 * w + x1] += v * wy1 * wx1;
            }
        }
    }
    dx
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial shape");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_data(a.channels + b.channels, a.height, a.width, data)
}

pub fn split_channels(t: Tensor, first: usize) -> (Tensor, Tensor) {
    let n = first * t.plane_len();
    let (h, w, c) = (t.height, t.width, t.channels);
    let mut data = t.data;
    let second = data.split_off(n);
    (
        Tensor::from_data(first, h, w, data),
        Tensor::from_data(c - first, h, w, second),
    )
}

pub fn sigmoid(v: f32) -> f32 {
    flush_subnormal(1.0 / (1.0 + (-v).exp()))
}

/// Subnormal floats are orders of magnitude slower on most CPUs; saturated
/// sigmoids produce them in bulk.
#[inline]
pub fn flush_subnormal(v: f32) -> f32 {
    if v.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}
