//! Two-stage detection with interchangeable grading heads.
//!
//! One detector architecture (feature pyramid, region proposals, RoIAlign,
//! second-stage heads) is instantiated either with a score regressor trained
//! with smooth L1 or with a categorical classifier trained with
//! cross-entropy. Everything else, including the objectness-keyed final NMS,
//! is shared, so the two variants differ only in how detected objects are
//! graded on an ordinal scale.
//!
//! Modules:
//! - [`toy_data`]: synthetic cylinder scenes with Gaussian radius label noise.
//! - [`data_pipeline`]: dataset store, cross-validation splits, patches, rater sampling.
//! - [`losses`]: softmax cross-entropy, smooth L1, hard-negative mining.
//! - [`detector`]: the network, its targets, losses and checkpoints.
//! - [`eval_metrics`]: binning, IoU matching, AP/AVP at IoU > 0.1, bin accuracy.
//! - [`inference`]: mirror views, ensembles, weighted box clustering, slice stacking.
//! - [`experiment`]: training runs, evaluation and result tables.

pub mod annotation;
pub mod data_pipeline;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval_metrics;
pub mod experiment;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod toy_data;
pub mod volume;

pub use error::{Error, Result};
