use serde::{Deserialize, Serialize};

use super::matching::MatchResult;

/// Which true-positive flag drives the precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TpKind {
    /// Localization only (AP).
    Detection,
    /// Localization and correct bin (AVP).
    Graded,
}

/// All-point average precision over `(confidence, is_tp)` pairs ranked by
/// confidence (descending; ties keep input order), with `n_gt` objects.
///
/// Area under the precision envelope, i.e. precision at each rank replaced by
/// the best precision at any deeper rank. `None` when there are no objects.
pub fn average_precision_ranked(ranked: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| ranked[b].0.total_cmp(&ranked[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if ranked[i].1 {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// AP (or AVP with [`TpKind::Graded`]) over scenes pooled into one ranking.
pub fn average_precision(results: &[MatchResult], kind: TpKind) -> Option<f64> {
    let n_gt = results.iter().map(|r| r.gt_count()).sum();
    let ranked: Vec<(f64, bool)> = results
        .iter()
        .flat_map(|r| r.detections.iter())
        .map(|d| {
            let tp = match kind {
                TpKind::Detection => d.detection_tp,
                TpKind::Graded => d.graded_tp,
            };
            (d.confidence, tp)
        })
        .collect();
    average_precision_ranked(&ranked, n_gt)
}

/// Graded TPs over detection TPs; `None` without any detection TP.
pub fn bin_accuracy(results: &[MatchResult]) -> Option<f64> {
    let det: usize = results.iter().map(|r| r.detection_tps()).sum();
    let graded: usize = results.iter().map(|r| r.graded_tps()).sum();
    (det > 0).then(|| graded as f64 / det as f64)
}
