//! Joint semi-supervised segmentation and classification.
//!
//! A U-Net style mask generator is trained against an `(n+1)`-class
//! discriminator that consumes image/mask pairs, with a self-supervised
//! transform-prediction head on unlabeled data. The crate also carries the
//! single-task and multitask baselines, evaluation metrics, statistical
//! tests, and an experiment runner for labeled-fraction sweeps.

pub mod annealing;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
