//! Segmented ternary hashing for cross-modal candidate recall.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the precisions used in practice: training in `f64`,
//! storage and inference in `f32`.

pub mod align;
pub mod baselines;
pub mod bench;
mod codec;
pub mod error;
pub mod hashnet;
pub mod index;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod pretrain;
pub mod scalar;
pub mod storage;
pub mod synth;
pub mod ternary;

pub use error::{Error, Result};

pub type HashHead64 = hashnet::HashHead<f64>;
pub type HashHead32 = hashnet::HashHead<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type LshIndex32 = baselines::LshIndex<f32>;
pub type Optimizer64 = hashnet::OptimizerState<f64>;
