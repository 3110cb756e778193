//! The super-resolution network.
//!
//! ```text
//! LR -> 3x3 conv -> [group: DMB x group_size + skip] x groups
//!    -> concat(group outputs) -> 1x1 fusion
//!    -> 1x1 conv -> 3x3 conv (3 s^2) -> pixel shuffle(s) -> SR
//! ```
//!
//! A DMB is an enhancement block followed by a residual bottleneck block:
//!
//! ```text
//! FEB: n = LN(x); b_i = dilated_i(SiLU(reduce_i(n)));
//!      (alpha, beta, gamma) = coeff(concat(b_i)).chunk
//!      out1 = alpha * n + beta;  out2 = sigmoid(gamma) * n
//!      y = x + fuse(concat(out1, out2))
//! ERB: y + expand(SiLU(conv(... SiLU(reduce(LN(y))))))
//! ```

pub mod checkpoint;
mod config;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, TrainingMeta};
pub use config::{ModelConfig, PRESETS};
pub use layers::{layers, LayerKind, LayerSpec};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Graph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Named trainable tensors in registration order.
pub type ParamStore<T> = IndexMap<String, Tensor<T>>;

/// A built network: its config and every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

/// Looks up a parameter and registers it on the graph.
fn p<T: Scalar, G: Graph<T>>(g: &mut G, params: &ParamStore<T>, name: &str) -> Result<G::Value> {
    let t = params
        .get(name)
        .ok_or_else(|| Error::Internal(format!("missing parameter {name}")))?;
    Ok(g.param(name, t))
}

fn conv<T: Scalar, G: Graph<T>>(
    g: &mut G,
    params: &ParamStore<T>,
    layer: &str,
    x: &G::Value,
    dilation: usize,
) -> Result<G::Value> {
    let w = p(g, params, &format!("{layer}.weight"))?;
    let b = p(g, params, &format!("{layer}.bias"))?;
    let k = g.value(&w).shape().h;
    let pad = if k == 3 { dilation } else { 0 };
    g.conv2d(x, &w, Some(&b), dilation, pad)
}

fn norm<T: Scalar, G: Graph<T>>(g: &mut G, params: &ParamStore<T>, layer: &str, x: &G::Value) -> Result<G::Value> {
    let gain = p(g, params, &format!("{layer}.gain"))?;
    let shift = p(g, params, &format!("{layer}.shift"))?;
    g.layer_norm(x, &gain, &shift)
}

fn expect_channels<T: Scalar, G: Graph<T>>(g: &G, x: &G::Value, c: usize, op: &'static str) -> Result<()> {
    let s = g.value(x).shape();
    if s.c != c {
        return Err(Error::shape(op, format!("expected {c} channels, got {s}")));
    }
    Ok(())
}

/// Feature enhancement block of `block`: dilated multi-branch context,
/// modulation (`alpha * n + beta`) and attention (`sigmoid(gamma) * n`) on the
/// normalized input, fused back onto the input through a residual.
pub fn feb_forward<T: Scalar, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    params: &ParamStore<T>,
    block: usize,
    x: &G::Value,
) -> Result<G::Value> {
    expect_channels(g, x, cfg.channels, "feb_forward")?;
    if cfg.feb_outputs() == 0 {
        return Ok(x.clone());
    }
    let pre = format!("{}.feb", layers::block_prefix(block));
    let xn = norm(g, params, &format!("{pre}.norm"), x)?;
    let mut branches = Vec::with_capacity(cfg.dilations.len());
    for (i, &d) in cfg.dilations.iter().enumerate() {
        let r = conv(g, params, &format!("{pre}.branches.{i}.reduce"), &xn, 1)?;
        let r = g.silu(&r);
        branches.push(conv(g, params, &format!("{pre}.branches.{i}.dilated"), &r, d)?);
    }
    let context = g.concat(&branches)?;
    let coeff = conv(g, params, &format!("{pre}.coeff"), &context, 1)?;
    let parts = g.chunk(&coeff, cfg.coeff_channels() / cfg.channels)?;
    let mut parts = parts.into_iter();
    let mut outs = Vec::with_capacity(2);
    if cfg.enable_modulation {
        let alpha = parts.next().expect("alpha chunk");
        let beta = parts.next().expect("beta chunk");
        let scaled = g.mul(&alpha, &xn)?;
        outs.push(g.add(&scaled, &beta)?);
    }
    if cfg.enable_attention {
        let gamma = parts.next().expect("gamma chunk");
        let gate = g.sigmoid(&gamma);
        outs.push(g.mul(&gate, &xn)?);
    }
    let merged = if outs.len() == 1 {
        outs.pop().expect("one output")
    } else {
        g.concat(&outs)?
    };
    let fused = conv(g, params, &format!("{pre}.fuse"), &merged, 1)?;
    g.add(x, &fused)
}

/// Efficient residual block of `block`: a normalized channel bottleneck with
/// SiLU after every convolution but the last, added back onto the input.
pub fn erb_forward<T: Scalar, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    params: &ParamStore<T>,
    block: usize,
    x: &G::Value,
) -> Result<G::Value> {
    expect_channels(g, x, cfg.channels, "erb_forward")?;
    let pre = format!("{}.erb", layers::block_prefix(block));
    let h = norm(g, params, &format!("{pre}.norm"), x)?;
    let h = conv(g, params, &format!("{pre}.reduce"), &h, 1)?;
    let mut h = g.silu(&h);
    for j in 0..cfg.erb_depth {
        let c = conv(g, params, &format!("{pre}.convs.{j}"), &h, 1)?;
        h = g.silu(&c);
    }
    let out = conv(g, params, &format!("{pre}.expand"), &h, 1)?;
    g.add(x, &out)
}

impl<T: Scalar> Network<T> {
    /// Builds a network with deterministic fan-in scaled uniform weights,
    /// zero biases and identity layer norms.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for layer in layers(&config) {
            match layer.kind {
                LayerKind::Conv {
                    c_in,
                    c_out,
                    kernel,
                    ..
                } => {
                    let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
                    let w = Tensor::from_fn([c_out, c_in, kernel, kernel], |_, _, _, _| {
                        T::of(rng.gen_range(-bound..bound))
                    });
                    params.insert(format!("{}.weight", layer.name), w);
                    params.insert(format!("{}.bias", layer.name), Tensor::zeros([1, c_out, 1, 1]));
                }
                LayerKind::Norm { channels } => {
                    params.insert(format!("{}.gain", layer.name), Tensor::ones([1, channels, 1, 1]));
                    params.insert(format!("{}.shift", layer.name), Tensor::zeros([1, channels, 1, 1]));
                }
            }
        }
        Ok(Network { config, params })
    }

    /// Assembles a network from existing parameters, checking every name and
    /// shape against the config.
    pub fn from_params(config: ModelConfig, mut params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut ordered = ParamStore::new();
        for layer in layers(&config) {
            for (name, shape) in layer.params() {
                let t = params
                    .shift_remove(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if t.shape() != Shape::from(shape) {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {}, config expects {}",
                        t.shape(),
                        Shape::from(shape)
                    )));
                }
                ordered.insert(name, t);
            }
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Network {
            config,
            params: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Shallow features: the first 3x3 convolution.
    pub fn shallow<G: Graph<T>>(&self, g: &mut G, lr: &G::Value) -> Result<G::Value> {
        expect_channels(g, lr, 3, "forward")?;
        conv(g, &self.params, "shallow", lr, 1)
    }

    /// One DMB: enhancement then residual bottleneck.
    pub fn dmb<G: Graph<T>>(&self, g: &mut G, block: usize, x: &G::Value) -> Result<G::Value> {
        let y = feb_forward(g, &self.config, &self.params, block, x)?;
        erb_forward(g, &self.config, &self.params, block, &y)
    }

    /// Deep feature extraction: residual groups, concatenation and fusion.
    pub fn deep<G: Graph<T>>(&self, g: &mut G, shallow: &G::Value) -> Result<G::Value> {
        let gs = self.config.group_size;
        let mut x = shallow.clone();
        let mut outputs = Vec::with_capacity(self.config.num_groups());
        for group in 0..self.config.num_groups() {
            let mut h = x.clone();
            for b in group * gs..(group + 1) * gs {
                h = self.dmb(g, b, &h)?;
            }
            x = g.add(&h, &x)?;
            outputs.push(x.clone());
        }
        let cat = g.concat(&outputs)?;
        conv(g, &self.params, "fusion", &cat, 1)
    }

    /// Reconstruction head: 1x1 conv, 3x3 conv to `3 s^2` channels, pixel shuffle.
    pub fn head<G: Graph<T>>(&self, g: &mut G, features: &G::Value) -> Result<G::Value> {
        let h = conv(g, &self.params, "head.pointwise", features, 1)?;
        let h = conv(g, &self.params, "head.conv", &h, 1)?;
        g.pixel_shuffle(&h, self.config.scale)
    }

    /// Full network on an `(N, 3, H, W)` batch; output is `(N, 3, sH, sW)`, unclamped.
    pub fn forward<G: Graph<T>>(&self, g: &mut G, lr: &G::Value) -> Result<G::Value> {
        let s = self.shallow(g, lr)?;
        let d = self.deep(g, &s)?;
        self.head(g, &d)
    }

    /// Eager inference.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(&mut Eager, lr)
    }

    /// Eager enhancement block `block` on features `x`.
    pub fn feb(&self, block: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        feb_forward(&mut Eager, &self.config, &self.params, block, x)
    }

    /// Eager residual bottleneck block `block` on features `x`.
    pub fn erb(&self, block: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        erb_forward(&mut Eager, &self.config, &self.params, block, x)
    }
}

/// Trainable scalars implied by a config, without building it.
pub fn param_count(config: &ModelConfig) -> usize {
    layers(config).iter().map(LayerSpec::param_count).sum()
}

/// Multiply-accumulates of every convolution for an `out_h x out_w` output,
/// evaluated at the low-resolution size `out / scale`. One MAC counts as one
/// FLOP; norms, activations and elementwise work are excluded.
pub fn flops_count(config: &ModelConfig, out_h: usize, out_w: usize) -> u64 {
    let pixels = (out_h / config.scale) as u64 * (out_w / config.scale) as u64;
    layers(config)
        .iter()
        .map(|l| l.macs_per_pixel() as u64 * pixels)
        .sum()
}
