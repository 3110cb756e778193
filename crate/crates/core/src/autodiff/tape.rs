use indexmap::IndexMap;

use super::graph::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal;
use crate::tensor::conv::{conv2d_backward_raw, conv2d_raw};
use crate::tensor::ops::{sigmoid_scalar, slice_channels};
use crate::tensor::{self, LayerNormCache, Shape, Tensor, LAYER_NORM_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        padding: usize,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        cache: LayerNormCache<T>,
    },
    Silu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Slice {
        x: Var,
        start: usize,
    },
    /// `ka * a + kb * b`
    Lincomb {
        a: Var,
        b: Var,
        ka: T,
        kb: T,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    MeanAbs {
        x: Var,
    },
    /// Mean separable L1 norm of the 2-D spectrum of `x`.
    SpectrumL1 {
        x: Var,
        sign_re: Tensor<T>,
        sign_im: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::PixelShuffle { x, .. }
            | Op::Silu { x }
            | Op::Sigmoid { x }
            | Op::Slice { x, .. }
            | Op::Sum { x }
            | Op::MeanAbs { x }
            | Op::SpectrumL1 { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, shift, .. } => vec![*x, *gain, *shift],
            Op::Concat { xs } => xs.clone(),
            Op::Lincomb { a, b, .. } | Op::Mul { a, b } => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run recording of tensor operations for reverse-mode
/// differentiation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    degenerate: bool,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
    params: IndexMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, `None` if `v` does not reach it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when unreachable.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }

    /// Gradient of a registered parameter.
    pub fn param(&self, name: &str) -> Option<Tensor<T>> {
        self.params.get(name).map(|&v| self.wrt(v))
    }

    /// Every registered parameter's gradient, in registration order.
    pub fn into_params(mut self) -> IndexMap<String, Tensor<T>> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|(name, v)| {
                let g = self.grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]));
                (name, g)
            })
            .collect()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: IndexMap::new(),
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True once a layer norm has seen a site with (numerically) zero variance,
    /// where its derivative is singular.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Registered parameters in registration order.
    pub fn params(&self) -> &IndexMap<String, Var> {
        &self.params
    }

    pub fn get(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A differentiable leaf that is not a named parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers an existing differentiable leaf under a parameter name, so
    /// later [`Graph::param`] lookups of `name` resolve to it.
    pub fn bind_param(&mut self, name: &str, v: Var) -> Result<()> {
        if !matches!(self.nodes.get(v.0), Some(n) if n.requires_grad && matches!(n.op, Op::Leaf)) {
            return Err(Error::contract("bind_param", format!("{name}: not a differentiable leaf")));
        }
        if self.params.contains_key(name) {
            return Err(Error::contract("bind_param", format!("{name} is already registered")));
        }
        self.params.insert(name.to_string(), v);
        Ok(())
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn lincomb(&mut self, a: Var, ka: T, b: Var, kb: T) -> Result<Var> {
        let value = self
            .get(a)
            .zip_map(self.get(b), "lincomb", |x, y| ka * x + kb * y)?;
        Ok(self.record(value, Op::Lincomb { a, b, ka, kb }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(a, T::one(), b, -T::one())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::full([1, 1, 1, 1], self.get(x).sum());
        self.record(value, Op::Sum { x })
    }

    /// Mean of `|x|` over every element.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let t = self.get(x);
        let n = T::of(t.numel().max(1) as f64);
        let total: T = crate::scalar::sum(&t.data().iter().map(|v| v.abs()).collect::<Vec<_>>());
        self.record(Tensor::full([1, 1, 1, 1], total / n), Op::MeanAbs { x })
    }

    /// Mean of `|Re F(x)| + |Im F(x)|` over every frequency bin, where `F` is
    /// the unnormalized 2-D DFT of each channel plane.
    pub fn spectrum_l1(&mut self, x: Var) -> Var {
        let (loss, sign_re, sign_im) = signal::spectrum_l1_forward(self.get(x));
        self.record(
            Tensor::full([1, 1, 1, 1], loss),
            Op::SpectrumL1 { x, sign_re, sign_im },
        )
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Internal(format!("unknown var {}", loss.0)))?;
        if root.value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for input in node.op.inputs() {
                if input.0 >= id {
                    return Err(Error::Internal(format!(
                        "tape is not topologically ordered: node {id} reads {}",
                        input.0
                    )));
                }
            }
            self.propagate(id, &g, &mut grads)?;
            // Interior gradients are dropped once consumed.
            if matches!(node.op, Op::Leaf) || id == loss.0 {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            params: self.params.clone(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                dilation,
                padding,
            } => {
                let cg = conv2d_backward_raw(self.get(*x), self.get(*w), *dilation, *padding, g)?;
                if self.wants(*x) {
                    accumulate(grads, *x, cg.input)?;
                }
                if self.wants(*w) {
                    accumulate(grads, *w, cg.weight)?;
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let shape = self.get(*b).shape();
                        accumulate(grads, *b, Tensor::from_vec(shape, cg.bias)?)?;
                    }
                }
            }
            Op::PixelShuffle { x, r } => {
                accumulate(grads, *x, tensor::pixel_unshuffle(g, *r)?)?;
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                cache,
            } => {
                let gain_t = self.get(*gain);
                let (dx, dgain, dshift) = tensor::layer_norm_backward(cache, gain_t.data(), g)?;
                if self.wants(*x) {
                    accumulate(grads, *x, dx)?;
                }
                if self.wants(*gain) {
                    accumulate(grads, *gain, Tensor::from_vec(gain_t.shape(), dgain)?)?;
                }
                if self.wants(*shift) {
                    let shape = self.get(*shift).shape();
                    accumulate(grads, *shift, Tensor::from_vec(shape, dshift)?)?;
                }
            }
            Op::Silu { x } => {
                let d = self.get(*x).zip_map(g, "silu_backward", |v, gv| {
                    let s = sigmoid_scalar(v);
                    gv * (s + v * s * (T::one() - s))
                })?;
                accumulate(grads, *x, d)?;
            }
            Op::Sigmoid { x } => {
                let d = node
                    .value
                    .zip_map(g, "sigmoid_backward", |s, gv| gv * s * (T::one() - s))?;
                accumulate(grads, *x, d)?;
            }
            Op::Concat { xs } => {
                let mut start = 0;
                for x in xs {
                    let c = self.get(*x).shape().c;
                    if self.wants(*x) {
                        accumulate(grads, *x, slice_channels(g, start, c))?;
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let slot = &mut grads[x.0];
                let target = slot.get_or_insert_with(|| Tensor::zeros(self.get(*x).shape()));
                let (ts, gs) = (target.shape(), g.shape());
                let p = gs.plane();
                for n in 0..gs.n {
                    let dst = (n * ts.c + start) * p;
                    let src = n * gs.c * p;
                    for (d, &s) in target.data_mut()[dst..dst + gs.c * p]
                        .iter_mut()
                        .zip(&g.data()[src..src + gs.c * p])
                    {
                        *d += s;
                    }
                }
            }
            Op::Lincomb { a, b, ka, kb } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.scale(*ka))?;
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.scale(*kb))?;
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.mul(self.get(*b))?)?;
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.mul(self.get(*a))?)?;
                }
            }
            Op::Sum { x } => {
                let up = g.data()[0];
                accumulate(grads, *x, Tensor::full(self.get(*x).shape(), up))?;
            }
            Op::MeanAbs { x } => {
                let xv = self.get(*x);
                let k = g.data()[0] / T::of(xv.numel().max(1) as f64);
                accumulate(grads, *x, xv.map(|v| sign(v) * k))?;
            }
            Op::SpectrumL1 { x, sign_re, sign_im } => {
                let d = signal::spectrum_l1_backward(sign_re, sign_im, g.data()[0]);
                accumulate(grads, *x, d)?;
            }
        }
        Ok(())
    }
}

/// Subgradient of `|v|` with `sign(0) = 0`.
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

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Value = Var;

    fn input(&mut self, value: Tensor<T>) -> Var {
        self.constant(value)
    }

    fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(value.clone());
        self.params.insert(name.to_string(), v);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.get(*v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, dilation: usize, padding: usize) -> Result<Var> {
        let value = conv2d_raw(
            self.get(*x),
            self.get(*w),
            b.map(|b| self.get(*b).data()),
            dilation,
            padding,
        )?;
        Ok(self.record(
            value,
            Op::Conv2d {
                x: *x,
                w: *w,
                b: b.copied(),
                dilation,
                padding,
            },
        ))
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, shift: &Var) -> Result<Var> {
        let eps = T::of(LAYER_NORM_EPS);
        let (value, cache) = tensor::layer_norm(self.get(*x), self.get(*gain).data(), self.get(*shift).data(), eps)?;
        if cache.min_variance <= eps {
            self.degenerate = true;
        }
        Ok(self.record(
            value,
            Op::LayerNorm {
                x: *x,
                gain: *gain,
                shift: *shift,
                cache,
            },
        ))
    }

    fn silu(&mut self, x: &Var) -> Var {
        let value = tensor::silu(self.get(*x));
        self.record(value, Op::Silu { x: *x })
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let value = tensor::sigmoid(self.get(*x));
        self.record(value, Op::Sigmoid { x: *x })
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        let value = tensor::pixel_shuffle(self.get(*x), r)?;
        Ok(self.record(value, Op::PixelShuffle { x: *x, r }))
    }

    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|v| self.get(*v)).collect();
        let value = tensor::concat_channels(&refs)?;
        Ok(self.record(value, Op::Concat { xs: xs.to_vec() }))
    }

    fn chunk(&mut self, x: &Var, k: usize) -> Result<Vec<Var>> {
        let c = self.get(*x).shape().c;
        if k == 0 || !c.is_multiple_of(k) {
            return Err(Error::shape(
                "chunk_channels",
                format!("{c} channels not divisible into {k} chunks"),
            ));
        }
        let len = c / k;
        Ok((0..k)
            .map(|i| {
                let value = slice_channels(self.get(*x), i * len, len);
                self.record(value, Op::Slice { x: *x, start: i * len })
            })
            .collect())
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.lincomb(*a, T::one(), *b, T::one())
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.get(*a).mul(self.get(*b))?;
        Ok(self.record(value, Op::Mul { a: *a, b: *b }))
    }
}
