use serde::{Deserialize, Serialize};

use crate::geometry::{nms, rank_by_score, BBox, BoxCoder};

/// A first-stage region proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    pub level: usize,
}

/// Turn per-anchor outputs into proposals: decode deltas, clip to the patch,
/// keep the `pre_nms_k` most object-like, suppress overlaps above `nms_iou`
/// and keep the best `post_nms_k`.
///
/// `deltas[i]` holds the `2 * ndim` deltas of anchor `i`; `levels[i]` its pyramid level.
#[allow(clippy::too_many_arguments)]
pub fn decode_and_propose(
    anchors: &[BBox],
    levels: &[usize],
    objectness: &[f64],
    deltas: &[Vec<f64>],
    coder: &BoxCoder,
    bounds: [f64; 3],
    pre_nms_k: usize,
    post_nms_k: usize,
    nms_iou: f64,
) -> Vec<Proposal> {
    let order = rank_by_score(objectness);
    let mut boxes = Vec::with_capacity(pre_nms_k.min(order.len()));
    let mut scores = Vec::with_capacity(boxes.capacity());
    let mut lv = Vec::with_capacity(boxes.capacity());
    for &i in &order {
        if boxes.len() >= pre_nms_k {
            break;
        }
        let b = coder.decode(&deltas[i], &anchors[i]).clip(bounds);
        if !b.is_valid() || (0..b.ndim()).any(|a| b.extent(a) < 1e-3) {
            continue;
        }
        boxes.push(b);
        scores.push(objectness[i]);
        lv.push(levels[i]);
    }
    nms(&boxes, &scores, nms_iou)
        .into_iter()
        .take(post_nms_k)
        .map(|k| Proposal {
            bbox: boxes[k],
            objectness: scores[k],
            level: lv[k],
        })
        .collect()
}
