use serde::{Deserialize, Serialize};

use super::BinningScheme;
use crate::detector::Detection;
use crate::error::Result;
use crate::geometry::{iou, BBox};

/// Evaluation IoU threshold; a match needs IoU strictly above it.
pub const EVAL_IOU: f64 = 0.1;

/// A ground-truth object for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Exact (or rater-mean) score.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedDetection {
    pub confidence: f64,
    pub detection_tp: bool,
    /// Detection-TP whose predicted bin equals the GT bin.
    pub graded_tp: bool,
    pub matched_gt: Option<usize>,
    pub predicted_bin: usize,
}

/// Per-detection outcomes (in input order) and per-GT matched flags for one scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub detections: Vec<MatchedDetection>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn gt_count(&self) -> usize {
        self.gt_matched.len()
    }

    pub fn detection_tps(&self) -> usize {
        self.detections.iter().filter(|d| d.detection_tp).count()
    }

    pub fn graded_tps(&self) -> usize {
        self.detections.iter().filter(|d| d.graded_tp).count()
    }
}

/// Greedy one-to-one matching of one scene.
///
/// Detections are visited by confidence (descending, then input index); each
/// takes the unmatched GT with the highest IoU (lowest index on ties) if that
/// IoU exceeds `iou_threshold`. Graded correctness compares the detection's
/// bin (argmax category for probability vectors) with the GT score's bin.
pub fn match_detections(
    detections: &[Detection],
    gts: &[GtObject],
    scheme: &BinningScheme,
    iou_threshold: f64,
) -> Result<MatchResult> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .objectness
            .total_cmp(&detections[a].objectness)
            .then(a.cmp(&b))
    });
    let gt_bins = gts.iter().map(|g| scheme.bin(g.score)).collect::<Result<Vec<_>>>()?;
    let mut gt_matched = vec![false; gts.len()];
    let mut out: Vec<Option<MatchedDetection>> = vec![None; detections.len()];
    for &d in &order {
        let det = &detections[d];
        let predicted_bin = det.grading.bin(scheme)?;
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox)?;
            if v > iou_threshold && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, g));
            }
        }
        let matched_gt = best.map(|(_, g)| g);
        if let Some(g) = matched_gt {
            gt_matched[g] = true;
        }
        out[d] = Some(MatchedDetection {
            confidence: det.objectness,
            detection_tp: matched_gt.is_some(),
            graded_tp: matched_gt.is_some_and(|g| gt_bins[g] == predicted_bin),
            matched_gt,
            predicted_bin,
        });
    }
    Ok(MatchResult {
        detections: out.into_iter().map(|d| d.expect("every detection visited")).collect(),
        gt_matched,
    })
}
