//! Training targets for both stages.

use crate::data_pipeline::TrainObject;
use crate::geometry::{iou_unchecked, BBox, BoxCoder};

use super::config::GradingHead;

/// Per-anchor labels for the proposal network.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnTargets {
    /// 1 positive, 0 negative, -1 ignored.
    pub labels: Vec<i8>,
    /// Encoded box for each positive anchor (empty for others).
    pub deltas: Vec<Vec<f64>>,
}

/// Anchors with IoU >= `pos_iou` to some object are positive, those below
/// `neg_iou` to every object negative; each object's best anchor is forced positive.
pub fn rpn_targets(anchors: &[BBox], gts: &[BBox], pos_iou: f64, neg_iou: f64, coder: &BoxCoder) -> RpnTargets {
    let mut labels = vec![0i8; anchors.len()];
    let mut best_gt = vec![usize::MAX; anchors.len()];
    if gts.is_empty() {
        return RpnTargets {
            labels,
            deltas: vec![Vec::new(); anchors.len()],
        };
    }
    let mut best_anchor = vec![(f64::NEG_INFINITY, 0usize); gts.len()];
    for (i, a) in anchors.iter().enumerate() {
        let mut best = (0.0, usize::MAX);
        for (g, gt) in gts.iter().enumerate() {
            let v = iou_unchecked(a, gt);
            if v > best.0 {
                best = (v, g);
            }
            if v > best_anchor[g].0 {
                best_anchor[g] = (v, i);
            }
        }
        best_gt[i] = best.1;
        labels[i] = if best.0 >= pos_iou {
            1
        } else if best.0 < neg_iou {
            0
        } else {
            -1
        };
    }
    for (g, &(v, i)) in best_anchor.iter().enumerate() {
        if v > 0.0 {
            labels[i] = 1;
            best_gt[i] = g;
        }
    }
    let deltas = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if labels[i] == 1 {
                coder.encode(&gts[best_gt[i]], a)
            } else {
                Vec::new()
            }
        })
        .collect();
    RpnTargets { labels, deltas }
}

/// Second-stage target for one proposal.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadTarget {
    Background,
    Foreground {
        /// Index of the matched object.
        gt: usize,
        iou: f64,
        /// Sampled training score (regressor target).
        score: f64,
        /// Its zero-based bin (classifier target).
        bin: usize,
        /// Encoded refinement deltas.
        deltas: Vec<f64>,
    },
}

impl HeadTarget {
    pub fn is_foreground(&self) -> bool {
        matches!(self, HeadTarget::Foreground { .. })
    }

    pub fn matched(&self) -> Option<usize> {
        match self {
            HeadTarget::Foreground { gt, .. } => Some(*gt),
            HeadTarget::Background => None,
        }
    }
}

/// A proposal is positive iff its best IoU with an object is >= `match_iou`;
/// it is matched to that best object (lowest index on ties).
pub fn assign_head_targets(
    proposals: &[BBox],
    objects: &[TrainObject],
    match_iou: f64,
    coder: &BoxCoder,
) -> Vec<HeadTarget> {
    proposals
        .iter()
        .map(|p| {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (g, o) in objects.iter().enumerate() {
                let v = iou_unchecked(p, &o.bbox);
                if v > best.0 {
                    best = (v, g);
                }
            }
            if best.1 == usize::MAX || best.0 < match_iou {
                return HeadTarget::Background;
            }
            let o = &objects[best.1];
            HeadTarget::Foreground {
                gt: best.1,
                iou: best.0,
                score: o.target.score,
                bin: o.target.bin,
                deltas: coder.encode(&o.bbox, p),
            }
        })
        .collect()
}

/// The grading target a head variant trains on.
pub fn grading_target(head: GradingHead, score: f64, bin: usize) -> f64 {
    match head {
        GradingHead::Regressor => score,
        GradingHead::Classifier => bin as f64,
    }
}

/// Binary mask target on a `(d, h, w)` grid laid over `roi`, sampled at cell centers.
pub fn mask_target(roi: &BBox, object: &TrainObject, pool_dhw: [usize; 3]) -> Vec<f32> {
    let [pd, ph, pw] = pool_dhw;
    let mut out = Vec::with_capacity(pd * ph * pw);
    for z in 0..pd {
        let zc = if roi.ndim() == 3 {
            roi.min[2] + (z as f64 + 0.5) * roi.extent(2) / pd as f64
        } else {
            0.5
        };
        for y in 0..ph {
            let yc = roi.min[1] + (y as f64 + 0.5) * roi.extent(1) / ph as f64;
            for x in 0..pw {
                let xc = roi.min[0] + (x as f64 + 0.5) * roi.extent(0) / pw as f64;
                out.push(if object.annotation.mask_contains(xc, yc, zc) {
                    1.0
                } else {
                    0.0
                });
            }
        }
    }
    out
}
