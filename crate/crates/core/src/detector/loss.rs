//! Detector loss as a function of raw output arrays and assigned targets.

use serde::{Deserialize, Serialize};

use super::config::{DetectorConfig, GradingHead};
use crate::error::{Error, Result};
use crate::losses::{
    bce_with_logits, cross_entropy_with_grad, mine_hard_negatives, sigmoid, smooth_l1, smooth_l1_grad,
    CategoricalTarget,
};
use crate::rng::Rng;

/// Network outputs for one patch, as flat arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawOutputs {
    /// One objectness logit per anchor.
    pub rpn_logits: Vec<f64>,
    /// `2 * ndim` deltas per anchor, anchor-major.
    pub rpn_deltas: Vec<f64>,
    /// `2 * ndim` refinement deltas per positive RoI.
    pub head_deltas: Vec<f64>,
    /// Grading outputs per positive RoI (1 score or `C` logits).
    pub grading: Vec<f64>,
    /// Mask logits per positive RoI, one per mask-grid cell.
    pub mask_logits: Vec<f64>,
}

/// Targets matching a [`RawOutputs`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTargets {
    /// Per anchor: 1 positive, 0 negative, -1 ignored.
    pub rpn_labels: Vec<i8>,
    /// Encoded box per anchor (only read for positives).
    pub rpn_deltas: Vec<Vec<f64>>,
    /// Encoded refinement target per positive RoI.
    pub head_deltas: Vec<Vec<f64>>,
    /// Per positive RoI: raw score (regressor) or zero-based bin (classifier).
    pub grading: Vec<f64>,
    /// Per positive RoI, binary mask on the mask grid.
    pub masks: Vec<Vec<f32>>,
}

/// Loss components after weighting, and their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rpn_objectness: f64,
    pub rpn_box: f64,
    pub grading: f64,
    pub box_refine: f64,
    pub mask: f64,
    pub total: f64,
    /// No positive RoI, so the grading, refinement and mask terms are zero.
    pub no_positives: bool,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 5] {
        [
            self.rpn_objectness,
            self.rpn_box,
            self.grading,
            self.box_refine,
            self.mask,
        ]
    }

    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.rpn_objectness += weight * other.rpn_objectness;
        self.rpn_box += weight * other.rpn_box;
        self.grading += weight * other.grading;
        self.box_refine += weight * other.box_refine;
        self.mask += weight * other.mask;
        self.total += weight * other.total;
    }
}

/// Loss for one patch and its gradient w.r.t. every output array.
///
/// Objectness uses binary cross-entropy over positive anchors and negatives
/// drawn by [`mine_hard_negatives`] in proportion to their foreground
/// probability. Box terms are smooth L1 summed over coordinates and averaged
/// over positives. The grading term averages smooth L1 on raw scores
/// (regressor) or softmax cross-entropy on bins (classifier) over positive RoIs.
pub fn total_loss(
    cfg: &DetectorConfig,
    out: &RawOutputs,
    tg: &LossTargets,
    rng: &mut Rng,
) -> Result<(LossBreakdown, RawOutputs)> {
    let n_anchors = tg.rpn_labels.len();
    let nd = 2 * cfg.dimensionality;
    let g_out = cfg.grading_outputs();
    let n_roi = tg.grading.len();
    let mask_cells = if n_roi > 0 { out.mask_logits.len() / n_roi } else { 0 };
    let shapes_ok = out.rpn_logits.len() == n_anchors
        && out.rpn_deltas.len() == n_anchors * nd
        && tg.rpn_deltas.len() == n_anchors
        && out.head_deltas.len() == n_roi * nd
        && tg.head_deltas.len() == n_roi
        && out.grading.len() == n_roi * g_out
        && tg.masks.len() == n_roi
        && tg.masks.iter().all(|m| m.len() == mask_cells);
    if !shapes_ok {
        return Err(Error::Shape("detector outputs and targets disagree in size".into()));
    }
    if out
        .rpn_logits
        .iter()
        .chain(&out.rpn_deltas)
        .chain(&out.head_deltas)
        .chain(&out.grading)
        .chain(&out.mask_logits)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("non-finite detector output".into()));
    }
    let w = cfg.loss_weights;
    let mut grads = RawOutputs {
        rpn_logits: vec![0.0; out.rpn_logits.len()],
        rpn_deltas: vec![0.0; out.rpn_deltas.len()],
        head_deltas: vec![0.0; out.head_deltas.len()],
        grading: vec![0.0; out.grading.len()],
        mask_logits: vec![0.0; out.mask_logits.len()],
    };
    let mut b = LossBreakdown::default();

    let positives: Vec<usize> = (0..n_anchors).filter(|&i| tg.rpn_labels[i] == 1).collect();
    let neg_pool: Vec<usize> = (0..n_anchors).filter(|&i| tg.rpn_labels[i] == 0).collect();
    let neg_scores: Vec<f64> = neg_pool.iter().map(|&i| sigmoid(out.rpn_logits[i])).collect();
    let mined = mine_hard_negatives(&neg_scores, positives.len(), cfg.negative_ratio, rng)?;
    let selected: Vec<(usize, f64)> = positives
        .iter()
        .map(|&i| (i, 1.0))
        .chain(mined.iter().map(|&k| (neg_pool[k], 0.0)))
        .collect();
    if !selected.is_empty() {
        let scale = w.rpn_objectness / selected.len() as f64;
        for &(i, t) in &selected {
            let (l, g) = bce_with_logits(out.rpn_logits[i], t);
            b.rpn_objectness += scale * l;
            grads.rpn_logits[i] += scale * g;
        }
    }
    if !positives.is_empty() {
        let scale = w.rpn_box / positives.len() as f64;
        for &i in &positives {
            for k in 0..nd {
                let (p, t) = (out.rpn_deltas[i * nd + k], tg.rpn_deltas[i][k]);
                b.rpn_box += scale * smooth_l1(p, t);
                grads.rpn_deltas[i * nd + k] = scale * smooth_l1_grad(p, t);
            }
        }
    }

    b.no_positives = n_roi == 0;
    if n_roi > 0 {
        let scale = 1.0 / n_roi as f64;
        for r in 0..n_roi {
            for k in 0..nd {
                let (p, t) = (out.head_deltas[r * nd + k], tg.head_deltas[r][k]);
                b.box_refine += w.box_refine * scale * smooth_l1(p, t);
                grads.head_deltas[r * nd + k] = w.box_refine * scale * smooth_l1_grad(p, t);
            }
            match cfg.grading_head {
                GradingHead::Regressor => {
                    let (p, t) = (out.grading[r], tg.grading[r]);
                    b.grading += w.grading * scale * smooth_l1(p, t);
                    grads.grading[r] = w.grading * scale * smooth_l1_grad(p, t);
                }
                GradingHead::Classifier => {
                    let target = CategoricalTarget::new(tg.grading[r] as usize, g_out)?;
                    let z = &out.grading[r * g_out..(r + 1) * g_out];
                    let (l, g) = cross_entropy_with_grad(z, target)?;
                    b.grading += w.grading * scale * l;
                    for (dst, gv) in grads.grading[r * g_out..(r + 1) * g_out].iter_mut().zip(g) {
                        *dst = w.grading * scale * gv;
                    }
                }
            }
            let cell_scale = w.mask * scale / mask_cells.max(1) as f64;
            for c in 0..mask_cells {
                let (l, g) = bce_with_logits(out.mask_logits[r * mask_cells + c], tg.masks[r][c] as f64);
                b.mask += cell_scale * l;
                grads.mask_logits[r * mask_cells + c] = cell_scale * g;
            }
        }
    }
    b.total = b.components().iter().sum();
    if !b.total.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {b:?}")));
    }
    Ok((b, grads))
}
