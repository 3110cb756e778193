//! Stride-1 dilated 2-D cross-correlation.
//!
//! The kernels work plane by plane: every kernel tap is a shifted
//! multiply-accumulate of a whole input row into an output row, which keeps
//! the inner loops contiguous. Work is split over independent output planes
//! only, so results do not depend on the thread count.

use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Weights and geometry of one convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2dParams<T> {
    /// `(c_out, c_in, k, k)`.
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub dilation: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>, dilation: usize, padding: usize) -> Self {
        Conv2dParams {
            weight,
            bias,
            dilation,
            padding,
        }
    }
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    input: Shape,
    output: Shape,
    k: usize,
    dilation: usize,
    padding: usize,
}

impl Geometry {
    /// Signed offset of tap `t` along one axis.
    #[inline(always)]
    fn offset(&self, t: usize) -> isize {
        (t * self.dilation) as isize - self.padding as isize
    }
}

/// Output positions `o` in `[0, out_len)` whose source `o + off` lies in `[0, in_len)`.
#[inline(always)]
fn valid_range(off: isize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (in_len as isize - off).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

fn geometry(input: Shape, weight: Shape, bias_len: Option<usize>, dilation: usize, padding: usize) -> Result<Geometry> {
    if weight.c != input.c {
        return Err(Error::shape(
            "conv2d",
            format!("input channels (axis 1) {} != weight c_in (axis 1) {}", input.c, weight.c),
        ));
    }
    if weight.h != weight.w || !(weight.h == 1 || weight.h == 3) {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be 1x1 or 3x3, got {}x{}", weight.h, weight.w),
        ));
    }
    if dilation == 0 {
        return Err(Error::contract("conv2d", "dilation must be >= 1"));
    }
    if let Some(b) = bias_len {
        if b != weight.n {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {b} != c_out (axis 0) {}", weight.n),
            ));
        }
    }
    let span = dilation * (weight.h - 1);
    let out_h = (input.h + 2 * padding) as isize - span as isize;
    let out_w = (input.w + 2 * padding) as isize - span as isize;
    if out_h < 1 || out_w < 1 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "empty output: input {}x{} (axes 2, 3), padding {padding}, dilation {dilation}",
                input.h, input.w
            ),
        ));
    }
    Ok(Geometry {
        input,
        output: Shape::new(input.n, weight.n, out_h as usize, out_w as usize),
        k: weight.h,
        dilation,
        padding,
    })
}

pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &Conv2dParams<T>) -> Result<Tensor<T>> {
    conv2d_raw(
        input,
        &params.weight,
        params.bias.as_deref(),
        params.dilation,
        params.padding,
    )
}

pub(crate) fn conv2d_raw<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    dilation: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), weight.shape(), bias.map(<[T]>::len), dilation, padding)?;
    let (cin, cout, k) = (g.input.c, g.output.c, g.k);
    let (in_w, out_h, out_w) = (g.input.w, g.output.h, g.output.w);
    let in_plane = g.input.plane();
    let wdata = weight.data();
    let idata = input.data();

    let mut out = Tensor::zeros(g.output);
    out.data_mut()
        .par_chunks_mut(g.output.plane())
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, co) = (idx / cout, idx % cout);
            if let Some(b) = bias {
                plane.fill(b[co]);
            }
            for ci in 0..cin {
                let src = &idata[(n * cin + ci) * in_plane..(n * cin + ci + 1) * in_plane];
                let taps = &wdata[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for ky in 0..k {
                    let dy = g.offset(ky);
                    let (y0, y1) = valid_range(dy, g.input.h, out_h);
                    for kx in 0..k {
                        let wv = taps[ky * k + kx];
                        let dx = g.offset(kx);
                        let (x0, x1) = valid_range(dx, in_w, out_w);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let ix0 = (x0 as isize + dx) as usize;
                            axpy(
                                &mut plane[oy * out_w + x0..oy * out_w + x1],
                                wv,
                                &src[iy * in_w + ix0..iy * in_w + ix0 + (x1 - x0)],
                            );
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of `conv2d` given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &Conv2dParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    conv2d_backward_raw(input, &params.weight, params.dilation, params.padding, grad_out)
}

pub(crate) fn conv2d_backward_raw<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dilation: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let g = geometry(input.shape(), weight.shape(), None, dilation, padding)?;
    if grad_out.shape() != g.output {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {} vs output {}", grad_out.shape(), g.output),
        ));
    }
    let (cin, cout, k) = (g.input.c, g.output.c, g.k);
    let (in_h, in_w, out_h, out_w) = (g.input.h, g.input.w, g.output.h, g.output.w);
    let (in_plane, out_plane) = (g.input.plane(), g.output.plane());
    let (wdata, idata, gdata) = (weight.data(), input.data(), grad_out.data());

    // d/d input: scatter every output gradient back through each tap.
    let mut grad_in = Tensor::zeros(g.input);
    grad_in
        .data_mut()
        .par_chunks_mut(in_plane)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, ci) = (idx / cin, idx % cin);
            for co in 0..cout {
                let go = &gdata[(n * cout + co) * out_plane..(n * cout + co + 1) * out_plane];
                let taps = &wdata[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for ky in 0..k {
                    let dy = g.offset(ky);
                    let (y0, y1) = valid_range(dy, in_h, out_h);
                    for kx in 0..k {
                        let wv = taps[ky * k + kx];
                        let dx = g.offset(kx);
                        let (x0, x1) = valid_range(dx, in_w, out_w);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let ix0 = (x0 as isize + dx) as usize;
                            axpy(
                                &mut plane[iy * in_w + ix0..iy * in_w + ix0 + (x1 - x0)],
                                wv,
                                &go[oy * out_w + x0..oy * out_w + x1],
                            );
                        }
                    }
                }
            }
        });

    // d/d weight: correlate the gradient with the shifted input.
    let mut grad_w = Tensor::zeros(weight.shape());
    grad_w
        .data_mut()
        .par_chunks_mut(cin * k * k)
        .enumerate()
        .for_each(|(co, wrow)| {
            for ci in 0..cin {
                for ky in 0..k {
                    let dy = g.offset(ky);
                    let (y0, y1) = valid_range(dy, in_h, out_h);
                    for kx in 0..k {
                        let dx = g.offset(kx);
                        let (x0, x1) = valid_range(dx, in_w, out_w);
                        let mut acc = T::zero();
                        if x0 < x1 {
                            for n in 0..g.input.n {
                                let go = &gdata[(n * cout + co) * out_plane..(n * cout + co + 1) * out_plane];
                                let src = &idata[(n * cin + ci) * in_plane..(n * cin + ci + 1) * in_plane];
                                if k == 1 && padding == 0 {
                                    acc += dot(go, src);
                                    continue;
                                }
                                for oy in y0..y1 {
                                    let iy = (oy as isize + dy) as usize;
                                    let ix0 = (x0 as isize + dx) as usize;
                                    acc += dot(
                                        &go[oy * out_w + x0..oy * out_w + x1],
                                        &src[iy * in_w + ix0..iy * in_w + ix0 + (x1 - x0)],
                                    );
                                }
                            }
                        }
                        wrow[(ci * k + ky) * k + kx] = acc;
                    }
                }
            }
        });

    let bias = (0..cout)
        .map(|co| {
            let mut acc = T::zero();
            for n in 0..g.output.n {
                acc += crate::scalar::sum(&gdata[(n * cout + co) * out_plane..(n * cout + co + 1) * out_plane]);
            }
            acc
        })
        .collect();

    Ok(Conv2dGrads {
        input: grad_in,
        weight: grad_w,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct summation straight from the definition.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, d: usize, p: usize) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let k = ws.h;
        let oh = xs.h + 2 * p - d * (k - 1);
        let ow = xs.w + 2 * p - d * (k - 1);
        Tensor::from_fn([xs.n, ws.n, oh, ow], |n, co, oy, ox| {
            let mut s = b.map_or(0.0, |b| b[co]);
            for ci in 0..xs.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = oy as isize + (ky * d) as isize - p as isize;
                        let ix = ox as isize + (kx * d) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            s += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn box_sum_on_constant_input() {
        let x = Tensor::<f32>::ones([1, 1, 3, 3]);
        let p = Conv2dParams::new(Tensor::ones([1, 1, 3, 3]), None, 1, 1);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 2, 2), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = random([2, 1, 5, 7], 3).cast::<f32>();
        let p = Conv2dParams::new(Tensor::ones([1, 1, 1, 1]), Some(vec![0.0]), 1, 0);
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn dilated_impulse_response_is_flipped_kernel() {
        let mut x = Tensor::<f64>::zeros([1, 1, 9, 9]);
        x.set(0, 0, 4, 4, 1.0);
        let w = Tensor::from_fn([1, 1, 3, 3], |_, _, ky, kx| (ky * 3 + kx + 1) as f64);
        let p = Conv2dParams::new(w.clone(), None, 4, 4);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y, naive(&x, &w, None, 4, 4));
        for ky in 0..3 {
            for kx in 0..3 {
                // Output at center + 4*(1-ky, 1-kx) reads the impulse through tap (ky, kx).
                let oy = 4 + 4 * (2 - ky) - 4;
                let ox = 4 + 4 * (2 - kx) - 4;
                assert_eq!(y.at(0, 0, oy, ox), w.at(0, 0, ky, kx));
            }
        }
        assert_eq!(y.sum(), 45.0);
    }

    #[test]
    fn matches_direct_summation() {
        for &(k, d) in &[(1usize, 1usize), (3, 1), (3, 2), (3, 4)] {
            let x = random([2, 3, 7, 6], 1);
            let w = random([4, 3, k, k], 2);
            let b = vec![0.1, -0.2, 0.3, 0.0];
            let pad = if k == 3 { d } else { 0 };
            let y = conv2d(&x, &Conv2dParams::new(w.clone(), Some(b.clone()), d, pad)).unwrap();
            let r = naive(&x, &w, Some(&b), d, pad);
            assert!(y.max_abs_diff(&r).unwrap() < 1e-12, "k={k} d={d}");
        }
    }

    #[test]
    fn one_hot_kernel_shifts_input() {
        let x = random([1, 1, 10, 10], 5);
        for d in [1usize, 2, 3] {
            for (ky, kx) in [(0usize, 0usize), (0, 2), (2, 1), (1, 1)] {
                let mut w = Tensor::zeros([1, 1, 3, 3]);
                w.set(0, 0, ky, kx, 1.0);
                let y = conv2d(&x, &Conv2dParams::new(w, None, d, d)).unwrap();
                let (sy, sx) = ((ky as isize - 1) * d as isize, (kx as isize - 1) * d as isize);
                for oy in 0..10isize {
                    for ox in 0..10isize {
                        let (iy, ix) = (oy + sy, ox + sx);
                        let expect = if (0..10).contains(&iy) && (0..10).contains(&ix) {
                            x.at(0, 0, iy as usize, ix as usize)
                        } else {
                            0.0
                        };
                        assert_eq!(y.at(0, 0, oy as usize, ox as usize), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros([1, 3, 3, 3]);
        let err = conv2d(&x, &Conv2dParams::new(w, None, 1, 1)).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
        let w = Tensor::<f32>::zeros([1, 2, 3, 3]);
        assert!(conv2d(&x, &Conv2dParams::new(w.clone(), None, 4, 0)).is_err());
        assert!(conv2d(&x, &Conv2dParams::new(w, Some(vec![0.0; 2]), 1, 1)).is_err());
        let w5 = Tensor::<f32>::zeros([1, 2, 5, 5]);
        assert!(conv2d(&x, &Conv2dParams::new(w5, None, 1, 2)).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv^T(g)> and likewise for the weight.
        let x = random([2, 3, 6, 5], 11);
        let w = random([2, 3, 3, 3], 12);
        let g = random([2, 2, 6, 5], 13);
        let y = conv2d_raw(&x, &w, None, 2, 2).unwrap();
        let grads = conv2d_backward_raw(&x, &w, 2, 2, &g).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.data().iter().zip(grads.input.data()).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.data().iter().zip(grads.weight.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
        assert!((grads.bias[0] - g.data()[..30].iter().chain(&g.data()[60..90]).sum::<f64>()).abs() < 1e-12);
    }
}
