//! Generative active adaptation for drifting, imbalanced flow classifiers.
//!
//! The crate covers the whole closed loop: dataset ingestion and the
//! synthetic drift benchmark, Gaussian-mixture density scoring of unlabeled
//! target flows, budgeted prior selection (plus uncertainty, coreset and
//! CLUE baselines), class-conditional minority augmentation with a
//! benign-likeness filter, MLP retraining and drift/fidelity metrics.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the pipeline uses throughout.

pub mod annotation;
pub mod augmentation;
pub mod dataset;
pub mod error;
pub mod classifier;
pub mod gmm;
pub mod kmeans;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Gmm = gmm::GmmParams<f64>;
pub type GmmF32 = gmm::GmmParams<f32>;
pub type Mlp = classifier::MlpModel<f64>;
pub type LogisticFilter = classifier::LogisticModel<f64>;
