//! Dense semantic segmentation with pixel-level outlier detection.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod imageio;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod verification;

pub use autodiff::{Scalar, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use model::{HeadKind, Mode, Model, ModelConfig, ModelOutput};
