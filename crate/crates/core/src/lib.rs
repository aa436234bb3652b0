//! Desk-scale object-detection workbench: a conv→batchnorm→activation
//! pre-block feeding a single-stage grid detector, reverse-mode autodiff,
//! detection metrics, a data pipeline, training, and an A/B benchmark.

pub mod autodiff;
pub mod bench;
pub mod boxes;
pub mod data;
pub mod detector;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autodiff::{GradTape, Gradients, ParamId, Var};
pub use boxes::{BBox, Detection, GroundTruth};
pub use error::{Error, Result};
pub use tensor::Tensor;
