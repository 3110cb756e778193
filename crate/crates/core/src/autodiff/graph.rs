use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor, LAYER_NORM_EPS};

/// The operation vocabulary the network is written against.
///
/// [`Eager`] evaluates immediately and keeps nothing; [`Tape`](super::Tape)
/// records every step so it can be differentiated afterwards.
pub trait Graph<T: Scalar> {
    type Value: Clone;

    /// A non-trainable input.
    fn input(&mut self, value: Tensor<T>) -> Self::Value;

    /// A named trainable tensor. Registering the same name twice returns the
    /// same value.
    fn param(&mut self, name: &str, value: &Tensor<T>) -> Self::Value;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: &Self::Value,
        bias: Option<&Self::Value>,
        dilation: usize,
        padding: usize,
    ) -> Result<Self::Value>;

    /// Channel-wise layer norm; `gain` and `shift` have shape `(1, C, 1, 1)`.
    fn layer_norm(&mut self, x: &Self::Value, gain: &Self::Value, shift: &Self::Value) -> Result<Self::Value>;

    fn silu(&mut self, x: &Self::Value) -> Self::Value;

    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;

    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;

    fn concat(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;

    fn chunk(&mut self, x: &Self::Value, k: usize) -> Result<Vec<Self::Value>>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Immediate evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Scalar> Graph<T> for Eager {
    type Value = Tensor<T>;

    fn input(&mut self, value: Tensor<T>) -> Tensor<T> {
        value
    }

    fn param(&mut self, _name: &str, value: &Tensor<T>) -> Tensor<T> {
        value.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        dilation: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        tensor::conv::conv2d_raw(x, weight, bias.map(Tensor::data), dilation, padding)
    }

    fn layer_norm(&mut self, x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tensor::layer_norm(x, gain.data(), shift.data(), T::of(LAYER_NORM_EPS))?.0)
    }

    fn silu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        tensor::silu(x)
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Tensor<T> {
        tensor::sigmoid(x)
    }

    fn pixel_shuffle(&mut self, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
        tensor::pixel_shuffle(x, r)
    }

    fn concat(&mut self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = xs.iter().collect();
        tensor::concat_channels(&refs)
    }

    fn chunk(&mut self, x: &Tensor<T>, k: usize) -> Result<Vec<Tensor<T>>> {
        tensor::chunk_channels(x, k)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.mul(b)
    }
}
