//! Reverse-mode automatic differentiation over dense NCHW tensors.

pub mod gradcheck;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub use tape::{BatchStats, Tape, Var};
pub use tensor::Tensor;
