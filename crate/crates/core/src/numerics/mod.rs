//! Dense tensors, reverse-mode gradients and finite-difference checking.

mod gradcheck;
pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_floor, GradCheckReport, DEFAULT_FLOOR};
pub use ops::{gelu, sigmoid, softmax_tensor, LAYER_NORM_EPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
