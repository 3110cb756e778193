//! Benchmark image-quality metrics on the luma channel.
//!
//! All statistics are accumulated in f64 regardless of the input scalar type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// How images are prepared before a metric is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    /// Pixels removed from every edge.
    pub border_crop: usize,
    /// Convert 3-channel inputs to studio-swing luma first. Single-channel
    /// inputs are always taken as luma.
    pub y_only: bool,
}

impl EvalProtocol {
    /// The usual benchmark protocol: luma only, crop `scale` pixels.
    pub fn for_scale(scale: usize) -> Self {
        EvalProtocol {
            border_crop: scale,
            y_only: true,
        }
    }
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self::for_scale(4)
    }
}

/// BT.601 studio-swing luma of an RGB image in `[0, 1]`: `(N, 3, H, W)` to
/// `(N, 1, H, W)`, with values in `[16, 235] / 255`.
pub fn rgb_to_y<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("rgb_to_y", format!("expected 3 channels, got {s}")));
    }
    Ok(Tensor::from_fn([s.n, 1, s.h, s.w], |n, _, h, w| {
        let r = image.at(n, 0, h, w).as_f64();
        let g = image.at(n, 1, h, w).as_f64();
        let b = image.at(n, 2, h, w).as_f64();
        T::of((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0)
    }))
}

/// Channels the metric is computed on, cropped, as f64 planes.
fn prepare<T: Scalar>(op: &'static str, img: &Tensor<T>, protocol: &EvalProtocol) -> Result<Tensor<f64>> {
    let img: Tensor<f64> = img.cast();
    let img = if protocol.y_only && img.shape().c == 3 {
        rgb_to_y(&img)?
    } else {
        img
    };
    let s = img.shape();
    let b = protocol.border_crop;
    if 2 * b >= s.h.min(s.w) {
        return Err(Error::contract(
            op,
            format!("border crop {b} leaves nothing of a {}x{} image", s.h, s.w),
        ));
    }
    img.crop(b, b, s.h - 2 * b, s.w - 2 * b)
}

fn prepare_pair<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    protocol: &EvalProtocol,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    a.expect_same_shape(b, op)?;
    Ok((prepare(op, a, protocol)?, prepare(op, b, protocol)?))
}

/// Peak signal-to-noise ratio in dB for peak 1. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, protocol: &EvalProtocol) -> Result<f64> {
    let (a, b) = prepare_pair("psnr", a, b, protocol)?;
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sq / a.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Valid-region separable Gaussian filter of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity (11x11 Gaussian window, sigma 1.5, K1 0.01,
/// K2 0.03, range 1) over the valid region of every prepared plane.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, protocol: &EvalProtocol) -> Result<f64> {
    let (a, b) = prepare_pair("ssim", a, b, protocol)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::contract(
            "ssim",
            format!("{}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w),
        ));
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (mut total, mut count) = (0.0, 0usize);
    for n in 0..s.n {
        for c in 0..s.c {
            let pa = a.plane(n, c);
            let pb = b.plane(n, c);
            let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
            let mu_a = filter_valid(pa, s.h, s.w, &taps);
            let mu_b = filter_valid(pb, s.h, s.w, &taps);
            let aa = filter_valid(&prod(pa, pa), s.h, s.w, &taps);
            let bb = filter_valid(&prod(pb, pb), s.h, s.w, &taps);
            let ab = filter_valid(&prod(pa, pb), s.h, s.w, &taps);
            for i in 0..mu_a.len() {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let var_a = aa[i] - ma * ma;
                let var_b = bb[i] - mb * mb;
                let cov = ab[i] - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
                total += num / den;
            }
            count += mu_a.len();
        }
    }
    Ok(total / count as f64)
}
