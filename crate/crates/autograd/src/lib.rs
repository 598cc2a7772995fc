//! Reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! The engine is small on purpose: contiguous row-major tensors, a dynamic
//! graph of [`Var`] nodes, and backward rules written as graph operations so
//! that gradients can be differentiated again (needed by gradient-penalty
//! critics).

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{grad, grad_with_seed, gradients, is_grad_enabled, no_grad, GradModeGuard, Var};
pub use optim::{Adam, AdamState};
pub use tensor::{ConvGeom, Tensor};
