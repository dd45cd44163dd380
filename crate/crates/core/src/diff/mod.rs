//! Reverse-mode automatic differentiation over small dense tensors.

mod hessian;
mod scalar;
mod tape;
pub mod tensor;

pub use hessian::{cross_hessian, hvp, value_and_gradient, Hvp};
pub use scalar::{Dual, Scalar};
pub use tape::{gradient, Tape, Var};
pub use tensor::Tensor;
