//! Dilated-modulation super-resolution: a compact convolutional network built
//! from multi-branch dilated feature modulation and attention, together with
//! everything needed to train and evaluate it from scratch.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelConfig, Network};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
