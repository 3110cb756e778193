//! Straight-line scalar re-implementations used as oracles. They share no
//! code with the library beyond reading tensor elements.
#![allow(dead_code)]

use dimosr_core::model::ModelConfig;
use dimosr_core::{Network, Tensor};

/// One image as `[channel][row][col]` in a flat vector.
#[derive(Debug, Clone)]
pub struct Img {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Img {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Img { c, h, w, v: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        assert_eq!(s.n, 1);
        let mut out = Img::zeros(s.c, s.h, s.w);
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    *out.at_mut(c, y, x) = t.at(0, c, y, x);
                }
            }
        }
        out
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.v[(c * self.h + y) * self.w + x]
    }

    pub fn max_diff(&self, t: &Tensor<f64>) -> f64 {
        let mut m = 0.0f64;
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    m = m.max((self.at(c, y, x) - t.at(0, c, y, x)).abs());
                }
            }
        }
        m
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Zero-padded dilated cross-correlation; 3x3 kernels pad by the dilation.
pub fn conv(x: &Img, w: &Tensor<f64>, b: &Tensor<f64>, dil: usize) -> Img {
    let (co, ci, k) = (w.shape().n, w.shape().c, w.shape().h);
    assert_eq!(ci, x.c);
    let pad = if k == 3 { dil as isize } else { 0 };
    let mut out = Img::zeros(co, x.h, x.w);
    for o in 0..co {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = b.at(0, o, 0, 0);
                for i in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + (ky * dil) as isize - pad;
                            let sx = xx as isize + (kx * dil) as isize - pad;
                            if sy >= 0 && sx >= 0 && (sy as usize) < x.h && (sx as usize) < x.w {
                                acc += w.at(o, i, ky, kx) * x.at(i, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                *out.at_mut(o, y, xx) = acc;
            }
        }
    }
    out
}

/// Per-site normalization over channels, eps 1e-6.
pub fn layer_norm(x: &Img, gain: &Tensor<f64>, shift: &Tensor<f64>) -> Img {
    let mut out = x.clone();
    for y in 0..x.h {
        for xx in 0..x.w {
            let mean = (0..x.c).map(|c| x.at(c, y, xx)).sum::<f64>() / x.c as f64;
            let var = (0..x.c).map(|c| (x.at(c, y, xx) - mean).powi(2)).sum::<f64>() / x.c as f64;
            for c in 0..x.c {
                let n = (x.at(c, y, xx) - mean) / (var + 1e-6).sqrt();
                *out.at_mut(c, y, xx) = gain.at(0, c, 0, 0) * n + shift.at(0, c, 0, 0);
            }
        }
    }
    out
}

pub fn map(x: &Img, f: impl Fn(f64) -> f64) -> Img {
    Img { v: x.v.iter().map(|&v| f(v)).collect(), ..x.clone() }
}

pub fn concat(parts: &[&Img]) -> Img {
    let mut out = Img::zeros(parts.iter().map(|p| p.c).sum(), parts[0].h, parts[0].w);
    out.v.clear();
    for p in parts {
        out.v.extend_from_slice(&p.v);
    }
    out
}

pub fn channels(x: &Img, start: usize, count: usize) -> Img {
    let plane = x.h * x.w;
    Img { c: count, v: x.v[start * plane..(start + count) * plane].to_vec(), ..x.clone() }
}

fn p<'a>(net: &'a Network<f64>, name: &str) -> &'a Tensor<f64> {
    net.param(name).unwrap_or_else(|| panic!("missing {name}"))
}

/// Enhancement block written out step by step.
pub fn feb(net: &Network<f64>, cfg: &ModelConfig, block: usize, x: &Img) -> Img {
    if !cfg.enable_attention && !cfg.enable_modulation {
        return x.clone();
    }
    let pre = format!("blocks.{block}.feb");
    let c = cfg.channels;
    let xn = layer_norm(x, p(net, &format!("{pre}.norm.gain")), p(net, &format!("{pre}.norm.shift")));
    let mut branches = Vec::new();
    for (i, &d) in cfg.dilations.iter().enumerate() {
        let r = conv(&xn, p(net, &format!("{pre}.branches.{i}.reduce.weight")), p(net, &format!("{pre}.branches.{i}.reduce.bias")), 1);
        let r = map(&r, silu);
        branches.push(conv(&r, p(net, &format!("{pre}.branches.{i}.dilated.weight")), p(net, &format!("{pre}.branches.{i}.dilated.bias")), d));
    }
    let refs: Vec<&Img> = branches.iter().collect();
    let coeff = conv(&concat(&refs), p(net, &format!("{pre}.coeff.weight")), p(net, &format!("{pre}.coeff.bias")), 1);
    let mut next = 0;
    let mut outs = Vec::new();
    if cfg.enable_modulation {
        let alpha = channels(&coeff, 0, c);
        let beta = channels(&coeff, c, c);
        next = 2 * c;
        let mut o = xn.clone();
        for i in 0..o.v.len() {
            o.v[i] = alpha.v[i] * xn.v[i] + beta.v[i];
        }
        outs.push(o);
    }
    if cfg.enable_attention {
        let gamma = channels(&coeff, next, c);
        let mut o = xn.clone();
        for i in 0..o.v.len() {
            o.v[i] = sigmoid(gamma.v[i]) * xn.v[i];
        }
        outs.push(o);
    }
    let refs: Vec<&Img> = outs.iter().collect();
    let fused = conv(&concat(&refs), p(net, &format!("{pre}.fuse.weight")), p(net, &format!("{pre}.fuse.bias")), 1);
    let mut y = x.clone();
    for i in 0..y.v.len() {
        y.v[i] += fused.v[i];
    }
    y
}

/// Residual bottleneck block written out step by step.
pub fn erb(net: &Network<f64>, cfg: &ModelConfig, block: usize, x: &Img) -> Img {
    let pre = format!("blocks.{block}.erb");
    let n = layer_norm(x, p(net, &format!("{pre}.norm.gain")), p(net, &format!("{pre}.norm.shift")));
    let mut h = map(&conv(&n, p(net, &format!("{pre}.reduce.weight")), p(net, &format!("{pre}.reduce.bias")), 1), silu);
    for j in 0..cfg.erb_depth {
        h = map(&conv(&h, p(net, &format!("{pre}.convs.{j}.weight")), p(net, &format!("{pre}.convs.{j}.bias")), 1), silu);
    }
    let e = conv(&h, p(net, &format!("{pre}.expand.weight")), p(net, &format!("{pre}.expand.bias")), 1);
    let mut y = x.clone();
    for i in 0..y.v.len() {
        y.v[i] += e.v[i];
    }
    y
}

/// Plain nested-loop DFT of a real plane: `(re, im)` in row-major order.
pub fn naive_dft2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -2.0 * std::f64::consts::PI * (((u * y) % h) as f64 / h as f64 + ((v * x) % w) as f64 / w as f64);
                    sr += plane[y * w + x] * ang.cos();
                    si += plane[y * w + x] * ang.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// PSNR over every element, peak 1, from scratch.
pub fn naive_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]) * (a[i] - b[i]);
    }
    10.0 * (a.len() as f64 / se).log10()
}

/// SSIM of one plane with a full 2-D Gaussian window, valid region.
pub fn naive_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut win = [[0.0; 11]; 11];
    let mut z = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i][j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += win[i][j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i][j] / z * a[(y + i) * w + x + j];
                    mb += win[i][j] / z * b[(y + i) * w + x + j];
                }
            }
            let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / z;
                    let (da, db) = (a[(y + i) * w + x + j] - ma, b[(y + i) * w + x + j] - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cv += k * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Studio-swing luma of one pixel.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
}
