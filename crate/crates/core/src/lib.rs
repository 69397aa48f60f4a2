//! Conformal-prediction-based machine unlearning.
//!
//! The crate covers the whole pipeline on synthetic classification data:
//!
//! - [`data`]: Gaussian-mixture generation, k-means, and the forget/retain
//!   split protocol for class-wise, group-wise and instance-wise forgetting.
//! - [`model`]: a small softmax MLP with hand-written backpropagation and an
//!   SGD trainer.
//! - [`conformal`]: split conformal calibration and prediction sets.
//! - [`metrics`]: ECF@c, EuCF@d, H(CE) and empirical certificate estimators.
//! - [`cpmu`]: the conformal unlearning algorithm (sigmoid-surrogate risks
//!   around the calibration quantile, anchored to the original weights).
//! - [`baselines`]: retraining, random relabeling and the loss-gap method.
//! - [`harness`]: declarative experiments, ablation sweeps and result files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
mod clock;
pub mod conformal;
pub mod cpmu;
pub mod data;
mod error;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod rng;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use matrix::Matrix;
