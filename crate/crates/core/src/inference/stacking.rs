use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

use super::clustering::weighted_mean;

/// Default IoU above which detections on adjacent slices are linked.
pub const DEFAULT_Z_LINK_IOU: f64 = 0.3;

/// A 2D detection found on slice `slice`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceDetection {
    pub slice: usize,
    pub detection: Detection,
}

/// Stack per-slice 2D detections into 3D boxes.
///
/// Slices are visited in ascending order. A detection extends the chain that
/// ended on the previous slice with which it has the highest IoU above
/// `link_iou`; candidate links are taken best-IoU first, one per chain and one
/// per detection. Unlinked detections start new chains. Each chain becomes a
/// box spanning `[first, last + 1)` along z whose in-plane box, objectness and
/// grading are objectness-weighted means over its members.
pub fn consolidate_2d_to_3d(dets: &[SliceDetection], link_iou: f64) -> Result<Vec<Detection>> {
    if dets.iter().any(|d| d.detection.bbox.ndim() != 2) {
        return Err(Error::InvalidArgument("slice detections must be 2D".into()));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[a]
            .slice
            .cmp(&dets[b].slice)
            .then(dets[b].detection.objectness.total_cmp(&dets[a].detection.objectness))
            .then(a.cmp(&b))
    });
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let z = dets[order[start]].slice;
        let end = start + order[start..].iter().take_while(|&&i| dets[i].slice == z).count();
        let here = &order[start..end];
        let open: Vec<usize> = (0..chains.len())
            .filter(|&c| z > 0 && dets[*chains[c].last().expect("chains are non-empty")].slice == z - 1)
            .collect();
        let mut links = Vec::new();
        for &c in &open {
            let tail = &dets[*chains[c].last().expect("chains are non-empty")].detection.bbox;
            for (k, &i) in here.iter().enumerate() {
                let v = iou(tail, &dets[i].detection.bbox)?;
                if v > link_iou {
                    links.push((v, c, k));
                }
            }
        }
        links.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut chain_taken = vec![false; chains.len()];
        let mut det_taken = vec![false; here.len()];
        for (_, c, k) in links {
            if chain_taken[c] || det_taken[k] {
                continue;
            }
            chain_taken[c] = true;
            det_taken[k] = true;
            chains[c].push(here[k]);
        }
        for (k, &i) in here.iter().enumerate() {
            if !det_taken[k] {
                chains.push(vec![i]);
            }
        }
        start = end;
    }
    chains
        .iter()
        .map(|chain| {
            let members: Vec<&Detection> = chain.iter().map(|&i| &dets[i].detection).collect();
            let mean = weighted_mean(&members)?;
            let z0 = dets[chain[0]].slice as f64;
            let z1 = dets[*chain.last().expect("chains are non-empty")].slice as f64 + 1.0;
            Ok(Detection {
                bbox: BBox::new_3d(
                    [mean.bbox.min[0], mean.bbox.min[1], z0],
                    [mean.bbox.max[0], mean.bbox.max[1], z1],
                ),
                ..mean
            })
        })
        .collect()
}
