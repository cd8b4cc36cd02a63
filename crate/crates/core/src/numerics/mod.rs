//! Tensor type, differentiable kernels with hand-written backward passes, Adam, and a
//! finite-difference gradient oracle.

mod adam;
mod gradcheck;
pub mod ops;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error, GradCheckReport};
pub use ops::Padding;
pub use scalar::Scalar;
pub use tensor::{matmul, Tensor};
