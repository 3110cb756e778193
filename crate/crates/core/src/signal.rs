//! 2-D discrete Fourier transforms of image planes and the spectral loss.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other length
//! goes through Bluestein's chirp-z reformulation on a padded radix-2 grid.

use num_complex::Complex;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Real and imaginary parts of a transformed tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

/// Precomputed tables for transforms of one length.
#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    len: usize,
    kind: PlanKind<T>,
}

#[derive(Debug, Clone)]
enum PlanKind<T> {
    Radix2 {
        /// `exp(-2 pi i k / n)` for `k < n/2`.
        twiddles: Vec<Complex<T>>,
    },
    Bluestein {
        /// `exp(-pi i k^2 / n)` for `k < n`.
        chirp: Vec<Complex<T>>,
        /// Forward transform of the conjugate chirp filter, length `inner.len`.
        filter: Vec<Complex<T>>,
        inner: Box<FftPlan<T>>,
    },
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "FFT length must be positive");
        if len.is_power_of_two() {
            let twiddles = (0..len / 2)
                .map(|k| {
                    let a = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
                    Complex::new(T::of(a.cos()), T::of(a.sin()))
                })
                .collect();
            return FftPlan {
                len,
                kind: PlanKind::Radix2 { twiddles },
            };
        }
        let m = (2 * len - 1).next_power_of_two();
        let inner = FftPlan::new(m);
        let n2 = 2 * len as u128;
        let chirp: Vec<Complex<T>> = (0..len)
            .map(|k| {
                // k^2 mod 2n keeps the angle small and exact.
                let q = (k as u128 * k as u128) % n2;
                let a = -std::f64::consts::PI * q as f64 / len as f64;
                Complex::new(T::of(a.cos()), T::of(a.sin()))
            })
            .collect();
        let mut filter = vec![Complex::new(T::zero(), T::zero()); m];
        filter[0] = chirp[0].conj();
        for k in 1..len {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.forward(&mut filter);
        FftPlan {
            len,
            kind: PlanKind::Bluestein {
                chirp,
                filter,
                inner: Box::new(inner),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform: `X[k] = sum x[j] e^{-2 pi i jk/n}`.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Radix2 { twiddles } => radix2(buf, twiddles),
            PlanKind::Bluestein {
                chirp,
                filter,
                inner,
            } => {
                let m = inner.len;
                let mut a = vec![Complex::new(T::zero(), T::zero()); m];
                for (k, (dst, &x)) in a.iter_mut().zip(buf.iter()).enumerate() {
                    *dst = x * chirp[k];
                }
                inner.forward(&mut a);
                for (v, &f) in a.iter_mut().zip(filter) {
                    *v = *v * f;
                }
                inner.inverse(&mut a);
                let scale = T::one() / T::of(m as f64);
                for (k, out) in buf.iter_mut().enumerate() {
                    *out = a[k] * chirp[k] * scale;
                }
            }
        }
    }

    /// In-place unnormalized inverse transform (positive exponent, no `1/n`).
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

fn radix2<T: Scalar>(buf: &mut [Complex<T>], twiddles: &[Complex<T>]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = buf[start + k + half] * twiddles[k * stride];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Transforms every `(h, w)` plane of a complex field in place.
fn transform_planes<T: Scalar>(re: &mut Tensor<T>, im: &mut Tensor<T>, inverse: bool) {
    let s = re.shape();
    if s.numel() == 0 {
        return;
    }
    let (row_plan, col_plan) = (FftPlan::<T>::new(s.w), FftPlan::<T>::new(s.h));
    let run = |plan: &FftPlan<T>, buf: &mut [Complex<T>]| {
        if inverse {
            plan.inverse(buf)
        } else {
            plan.forward(buf)
        }
    };
    let mut row = vec![Complex::new(T::zero(), T::zero()); s.w];
    let mut col = vec![Complex::new(T::zero(), T::zero()); s.h];
    for n in 0..s.n {
        for c in 0..s.c {
            let (pr, pi) = (re.plane_mut(n, c), im.plane_mut(n, c));
            for y in 0..s.h {
                for x in 0..s.w {
                    row[x] = Complex::new(pr[y * s.w + x], pi[y * s.w + x]);
                }
                run(&row_plan, &mut row);
                for x in 0..s.w {
                    pr[y * s.w + x] = row[x].re;
                    pi[y * s.w + x] = row[x].im;
                }
            }
            for x in 0..s.w {
                for y in 0..s.h {
                    col[y] = Complex::new(pr[y * s.w + x], pi[y * s.w + x]);
                }
                run(&col_plan, &mut col);
                for y in 0..s.h {
                    pr[y * s.w + x] = col[y].re;
                    pi[y * s.w + x] = col[y].im;
                }
            }
        }
    }
}

/// Unnormalized forward 2-D DFT of every channel plane.
pub fn fft2<T: Scalar>(input: &Tensor<T>) -> ComplexPlane<T> {
    let mut re = input.clone();
    let mut im = Tensor::zeros(input.shape());
    transform_planes(&mut re, &mut im, false);
    ComplexPlane { re, im }
}

/// Unnormalized inverse 2-D DFT; `ifft2(fft2(x)) == H * W * x`.
pub fn ifft2<T: Scalar>(input: &ComplexPlane<T>) -> Result<ComplexPlane<T>> {
    input.re.expect_same_shape(&input.im, "ifft2")?;
    let mut re = input.re.clone();
    let mut im = input.im.clone();
    transform_planes(&mut re, &mut im, true);
    Ok(ComplexPlane { re, im })
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Spectral L1 of a residual `diff`: the loss value plus the sign planes its
/// gradient needs.
pub(crate) fn spectrum_l1_forward<T: Scalar>(diff: &Tensor<T>) -> (T, Tensor<T>, Tensor<T>) {
    let spec = fft2(diff);
    let bins = T::of(diff.numel().max(1) as f64);
    let total: f64 = spec
        .re
        .data()
        .iter()
        .zip(spec.im.data())
        .map(|(r, i)| r.abs().as_f64() + i.abs().as_f64())
        .sum();
    (T::of(total) / bins, spec.re.map(sign), spec.im.map(sign))
}

/// Gradient of the spectral L1 with respect to the residual, scaled by `upstream`.
///
/// With `s = sign(Re) + i sign(Im)`, the derivative is `Re(IDFT(s)) / bins`.
pub(crate) fn spectrum_l1_backward<T: Scalar>(sign_re: &Tensor<T>, sign_im: &Tensor<T>, upstream: T) -> Tensor<T> {
    let mut re = sign_re.clone();
    let mut im = sign_im.clone();
    transform_planes(&mut re, &mut im, true);
    let k = upstream / T::of(re.numel().max(1) as f64);
    re.scale(k)
}

/// Mean over bins of `|Re(F(sr) - F(hr))| + |Im(F(sr) - F(hr))|`.
pub fn freq_loss<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<T> {
    let diff = sr.sub(hr).map_err(|_| mismatch("freq_loss", sr, hr))?;
    Ok(spectrum_l1_forward(&diff).0)
}

pub fn mae<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<T> {
    let diff = sr.sub(hr).map_err(|_| mismatch("mae", sr, hr))?;
    let n = T::of(diff.numel().max(1) as f64);
    Ok(diff.map(|v| v.abs()).sum() / n)
}

/// `mae(sr, hr) + lambda * freq_loss(sr, hr)`.
pub fn total_loss<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    let diff = sr.sub(hr).map_err(|_| mismatch("total_loss", sr, hr))?;
    let n = T::of(diff.numel().max(1) as f64);
    let mae: T = crate::scalar::sum(&diff.map(|v| v.abs()).into_vec()) / n;
    if lambda == T::zero() {
        return Ok(mae);
    }
    Ok(mae + lambda * spectrum_l1_forward(&diff).0)
}

/// Records `mae + lambda * freq_loss` on a tape.
pub fn total_loss_on<T: Scalar>(tape: &mut Tape<T>, sr: Var, hr: Var, lambda: T) -> Result<Var> {
    check_lambda(lambda)?;
    if tape.get(sr).shape() != tape.get(hr).shape() {
        return Err(mismatch("total_loss", tape.get(sr), tape.get(hr)));
    }
    let diff = tape.sub(sr, hr)?;
    let mae = tape.mean_abs(diff);
    if lambda == T::zero() {
        return Ok(mae);
    }
    let freq = tape.spectrum_l1(diff);
    tape.lincomb(mae, T::one(), freq, lambda)
}

/// Records `freq_loss` on a tape.
pub fn freq_loss_on<T: Scalar>(tape: &mut Tape<T>, sr: Var, hr: Var) -> Result<Var> {
    if tape.get(sr).shape() != tape.get(hr).shape() {
        return Err(mismatch("freq_loss", tape.get(sr), tape.get(hr)));
    }
    let diff = tape.sub(sr, hr)?;
    Ok(tape.spectrum_l1(diff))
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if !(lambda >= T::zero()) {
        return Err(Error::contract("total_loss", format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::shape(op, format!("{} vs {}", a.shape(), b.shape()))
}
