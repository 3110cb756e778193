use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variance regularizer for [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Rearranges `(n, c*r*r, h, w)` into `(n, c, h*r, w*r)`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channels {} not divisible by r^2 = {}", s.c, r * r),
        ));
    }
    let oc = s.c / (r * r);
    let os = Shape::new(s.n, oc, s.h * r, s.w * r);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    out.data_mut()
        .par_chunks_mut(os.plane())
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, c) = (idx / oc, idx % oc);
            for i in 0..r {
                for j in 0..r {
                    let ic = c * r * r + i * r + j;
                    let base = (n * s.c + ic) * s.plane();
                    for h in 0..s.h {
                        let row = &src[base + h * s.w..base + (h + 1) * s.w];
                        let orow = (h * r + i) * os.w;
                        for (w, &v) in row.iter().enumerate() {
                            plane[orow + w * r + j] = v;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]: `(n, c, h*r, w*r)` into `(n, c*r*r, h, w)`.
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    Ok(Tensor::from_fn(os, |n, c, h, w| {
        let (base, ij) = (c / (r * r), c % (r * r));
        input.at(n, base, h * r + ij / r, w * r + ij % r)
    }))
}

/// Per-site statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    /// Normalized input before gain/shift.
    pub normalized: Tensor<T>,
    /// `1 / sqrt(var + eps)` for each `(n, h, w)` site.
    pub inv_std: Vec<T>,
    /// Smallest per-site variance seen; zero means the input was constant somewhere.
    pub min_variance: T,
}

/// Normalizes the channel vector at every spatial site, then applies
/// per-channel `gain` and `shift`.
pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let s = input.shape();
    if gain.len() != s.c || shift.len() != s.c {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "gain/shift lengths {}/{} vs {} channels",
                gain.len(),
                shift.len(),
                s.c
            ),
        ));
    }
    let p = s.plane();
    let inv_c = T::one() / T::of(s.c as f64);
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.n * p];
    let mut min_variance = T::infinity();
    let x = input.data();
    let sample = s.c * p;

    for n in 0..s.n {
        let xs = &x[n * sample..(n + 1) * sample];
        let mut mean = vec![T::zero(); p];
        for c in 0..s.c {
            for (m, &v) in mean.iter_mut().zip(&xs[c * p..(c + 1) * p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        let mut var = vec![T::zero(); p];
        for c in 0..s.c {
            for ((acc, &v), &m) in var.iter_mut().zip(&xs[c * p..(c + 1) * p]).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let rs = &mut inv_std[n * p..(n + 1) * p];
        for (r, v) in rs.iter_mut().zip(&var) {
            let v = *v * inv_c;
            min_variance = min_variance.min(v);
            *r = T::one() / (v + eps).sqrt();
        }
        let ns = &mut normalized.data_mut()[n * sample..(n + 1) * sample];
        for c in 0..s.c {
            let src = &xs[c * p..(c + 1) * p];
            for (i, o) in ns[c * p..(c + 1) * p].iter_mut().enumerate() {
                *o = (src[i] - mean[i]) * rs[i];
            }
        }
        let os = &mut out.data_mut()[n * sample..(n + 1) * sample];
        for c in 0..s.c {
            let (g, b) = (gain[c], shift[c]);
            for (o, &v) in os[c * p..(c + 1) * p].iter_mut().zip(&ns[c * p..(c + 1) * p]) {
                *o = g * v + b;
            }
        }
    }
    if s.numel() == 0 {
        min_variance = T::zero();
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
            min_variance,
        },
    ))
}

/// Closed-form layer-norm gradient: returns `(d input, d gain, d shift)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(Error::shape(
            "layer_norm_backward",
            format!("grad {} vs {}", grad_out.shape(), s),
        ));
    }
    let p = s.plane();
    let sample = s.c * p;
    let inv_c = T::one() / T::of(s.c as f64);
    let xhat = cache.normalized.data();
    let go = grad_out.data();
    let mut dgain = vec![T::zero(); s.c];
    let mut dshift = vec![T::zero(); s.c];
    let mut dx = Tensor::zeros(s);

    for n in 0..s.n {
        let xh = &xhat[n * sample..(n + 1) * sample];
        let gs = &go[n * sample..(n + 1) * sample];
        for c in 0..s.c {
            dgain[c] += crate::scalar::dot(&gs[c * p..(c + 1) * p], &xh[c * p..(c + 1) * p]);
            dshift[c] += crate::scalar::sum(&gs[c * p..(c + 1) * p]);
        }
        // mean of dxhat and of dxhat * xhat across channels
        let mut m1 = vec![T::zero(); p];
        let mut m2 = vec![T::zero(); p];
        for c in 0..s.c {
            let g = gain[c];
            for i in 0..p {
                let d = gs[c * p + i] * g;
                m1[i] += d;
                m2[i] += d * xh[c * p + i];
            }
        }
        let rs = &cache.inv_std[n * p..(n + 1) * p];
        let out = &mut dx.data_mut()[n * sample..(n + 1) * sample];
        for c in 0..s.c {
            let g = gain[c];
            for i in 0..p {
                let d = gs[c * p + i] * g;
                out[c * p + i] = rs[i] * (d - m1[i] * inv_c - xh[c * p + i] * m2[i] * inv_c);
            }
        }
    }
    Ok((dx, dgain, dshift))
}

#[inline(always)]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Both branches avoid overflow in exp.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn silu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x * sigmoid_scalar(x))
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::contract("concat_channels", "no inputs"))?
        .shape();
    let mut c = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} vs {first} on axes 0, 2, 3"),
            ));
        }
        c += s.c;
    }
    let os = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for t in inputs {
            let len = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::from_vec(os, data)
}

/// Channel range `[start, start + len)` as a new tensor.
pub(crate) fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let s = input.shape();
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n * len * p);
    for n in 0..s.n {
        let base = (n * s.c + start) * p;
        data.extend_from_slice(&input.data()[base..base + len * p]);
    }
    Tensor::from_vec(Shape::new(s.n, len, s.h, s.w), data).expect("slice length")
}

/// Splits the channel axis into `k` equal consecutive pieces.
pub fn chunk_channels<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Vec<Tensor<T>>> {
    let c = input.shape().c;
    if k == 0 || !c.is_multiple_of(k) {
        return Err(Error::shape(
            "chunk_channels",
            format!("{c} channels not divisible into {k} chunks"),
        ));
    }
    let len = c / k;
    Ok((0..k).map(|i| slice_channels(input, i * len, len)).collect())
}
