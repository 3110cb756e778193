use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Taps of one output sample along an axis.
struct Contribution {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

/// Per-output taps along one axis. `inv_scale` is `1 / scale`, passed
/// separately so integer factors stay exact.
fn contributions(in_len: usize, out_len: usize, scale: f64, inv_scale: f64) -> Vec<Contribution> {
    let antialias = scale < 1.0;
    let width = if antialias { 4.0 * inv_scale } else { 4.0 };
    let taps = width.ceil() as i64 + 2;
    let n = in_len as i64;
    (1..=out_len)
        .map(|x| {
            // 1-based sample position in input coordinates.
            let u = x as f64 * inv_scale + 0.5 * (1.0 - inv_scale);
            let left = (u - width / 2.0).floor() as i64;
            let mut indices = Vec::with_capacity(taps as usize);
            let mut weights = Vec::with_capacity(taps as usize);
            for j in 0..taps {
                let idx = left + j;
                let d = u - idx as f64;
                let wt = if antialias { scale * cubic(scale * d) } else { cubic(d) };
                if wt == 0.0 {
                    continue;
                }
                // Symmetric extension: ... 2 1 | 1 2 ... n | n n-1 ...
                let period = 2 * n;
                let m = (idx - 1).rem_euclid(period);
                let src = if m < n { m } else { period - 1 - m };
                indices.push(src as usize);
                weights.push(wt);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Contribution { indices, weights }
        })
        .collect()
}

fn resize_impl<T: Scalar>(image: &Tensor<T>, out_h: usize, out_w: usize, scale: f64, inv: f64) -> Result<Tensor<T>> {
    let s = image.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract(
            "bicubic_resize",
            format!("scale {scale} maps {}x{} to an empty image", s.h, s.w),
        ));
    }
    let cols = contributions(s.w, out_w, scale, inv);
    let rows = contributions(s.h, out_h, scale, inv);
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    let mut tmp = vec![0.0f64; s.h * out_w];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = image.plane(n, c);
            for y in 0..s.h {
                let line = &src[y * s.w..(y + 1) * s.w];
                for (x, k) in cols.iter().enumerate() {
                    tmp[y * out_w + x] = k.indices.iter().zip(&k.weights).map(|(&i, w)| w * line[i].as_f64()).sum();
                }
            }
            let dst = out.plane_mut(n, c);
            for (y, k) in rows.iter().enumerate() {
                for x in 0..out_w {
                    let v: f64 = k.indices.iter().zip(&k.weights).map(|(&i, w)| w * tmp[i * out_w + x]).sum();
                    dst[y * out_w + x] = T::of(v);
                }
            }
        }
    }
    Ok(out)
}

/// Separable bicubic resampling by `scale` on both axes, with antialiasing
/// on downscale and symmetric boundary extension. Output sides are
/// `round(side * scale)`.
pub fn bicubic_resize<T: Scalar>(image: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::contract("bicubic_resize", format!("scale must be positive, got {scale}")));
    }
    if scale == 1.0 {
        return Ok(image.clone());
    }
    let s = image.shape();
    let oh = (s.h as f64 * scale).round() as usize;
    let ow = (s.w as f64 * scale).round() as usize;
    resize_impl(image, oh, ow, scale, 1.0 / scale)
}

/// Bicubic downscale by an integer factor; sides must be divisible by it.
pub fn bicubic_downscale<T: Scalar>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(Error::contract(
            "bicubic_downscale",
            format!("{}x{} is not divisible by factor {factor}", s.h, s.w),
        ));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    resize_impl(image, s.h / factor, s.w / factor, 1.0 / factor as f64, factor as f64)
}

/// Bicubic upscale by an integer factor.
pub fn bicubic_upscale<T: Scalar>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::contract("bicubic_upscale", "factor must be positive"));
    }
    let s = image.shape();
    resize_impl(image, s.h * factor, s.w * factor, factor as f64, 1.0 / factor as f64)
}

/// Crops both sides down to a multiple of `scale`.
pub fn modcrop<T: Scalar>(image: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    image.crop(0, 0, s.h - s.h % scale, s.w - s.w % scale)
}
