//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod flat;
pub mod gradcheck;
mod hvp;
mod tape;
mod tensor;

pub use flat::{dot, norm, FlatGrad};
pub use hvp::{directional_fd, gradient_fd, hvp, relative_error, Objective};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
