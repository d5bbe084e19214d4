//! Two-stage detector: residual feature pyramid, proposal network, RoIAlign
//! and second-stage heads, with either a score regressor or a categorical
//! classifier as grading head.

mod anchors;
mod checkpoint;
mod config;
mod loss;
mod model;
mod proposals;
mod targets;

use serde::{Deserialize, Serialize};

pub use anchors::generate_anchors;
pub use checkpoint::{Checkpoint, CheckpointMetadata, CHECKPOINT_VERSION};
pub use config::{AnchorConfig, DetectorConfig, GradingHead};
pub use loss::{total_loss, LossBreakdown, LossTargets, RawOutputs};
pub use model::{final_nms, Detector, HeadOutput, Pyramid, RpnOutput, GRADING_NAMESPACE};
pub use proposals::{decode_and_propose, Proposal};
pub use targets::{assign_head_targets, grading_target, mask_target, rpn_targets, HeadTarget, RpnTargets};

use crate::data_pipeline::Batch;
use crate::error::{Error, Result};
use crate::eval_metrics::BinningScheme;
use crate::geometry::BBox;
use crate::nn::Adam;
use crate::rng::Rng;

/// Grading output of one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grading {
    /// Continuous score on the rating scale.
    Score(f64),
    /// Probability per category.
    Probabilities(Vec<f64>),
}

impl Grading {
    /// Zero-based bin: the score's bin, or the most probable category
    /// (lowest index on ties).
    pub fn bin(&self, scheme: &BinningScheme) -> Result<usize> {
        match self {
            Grading::Score(s) => scheme.bin(*s),
            Grading::Probabilities(p) => {
                let mut best = 0;
                for (i, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = i;
                    }
                }
                if p.iter().any(|v| v.is_nan()) {
                    return Err(Error::Numeric("NaN category probability".into()));
                }
                Ok(best)
            }
        }
    }

    /// A point estimate on the rating scale: the score itself, or the center
    /// of the most probable category.
    pub fn point(&self, scheme: &BinningScheme) -> Result<f64> {
        match self {
            Grading::Score(s) => Ok(*s),
            Grading::Probabilities(_) => Ok(scheme.centers()[self.bin(scheme)?]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    pub grading: Grading,
}

/// One optimizer step over a batch: per-sample losses are averaged.
///
/// Fails with a numeric error, leaving parameters untouched, when the loss
/// or any gradient is not finite.
pub fn train_step(det: &mut Detector, adam: &mut Adam, batch: &Batch, rng: &mut Rng) -> Result<LossBreakdown> {
    if batch.samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    det.params_mut().zero_grads();
    let w = 1.0 / batch.samples.len() as f64;
    let mut total = LossBreakdown::default();
    for s in &batch.samples {
        let b = det.accumulate_sample(s, w, rng)?;
        total.accumulate(&b, w);
        total.no_positives &= b.no_positives;
    }
    if !det.params().grads_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    adam.step(det.params_mut());
    if !det.params().all_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(total)
}
