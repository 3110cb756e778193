//! Reverse-mode differentiation over the tensor kernels.

mod check;
mod graph;
mod tape;

pub use check::{
    directional_check, grad_check, grad_check_many, relative_error, CheckStatus, ElementCheck,
    GradCheckOptions, GradCheckReport,
};
pub use graph::{Eager, Graph};
pub use tape::{Gradients, Tape, Var};
