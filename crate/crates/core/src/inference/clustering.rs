use serde::{Deserialize, Serialize};

use crate::detector::{Detection, Grading};
use crate::error::{Error, Result};
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// A box joins a cluster when its IoU with the seed exceeds this.
    pub iou_threshold: f64,
    /// Smaller clusters are dropped.
    pub min_cluster_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            iou_threshold: 0.5,
            min_cluster_size: 1,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!(
                "cluster IoU threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// A prediction tagged with the ensemble member and view it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedDetection {
    pub detection: Detection,
    pub member: usize,
    pub view: usize,
}

/// Objectness-weighted mean of detections: coordinates, objectness and grading.
/// A single detection is returned as is.
pub fn weighted_mean(members: &[&Detection]) -> Result<Detection> {
    if members.len() == 1 {
        return Ok(members[0].clone());
    }
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty cluster".into()))?;
    let w: Vec<f64> = members.iter().map(|d| d.objectness.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / members.len() as f64; members.len()]
    };
    // Averaging offsets from the first member keeps identical members exact.
    let mean = |f: &dyn Fn(&Detection) -> f64| {
        let x0 = f(first);
        x0 + members.iter().zip(&w).map(|(d, wi)| wi * (f(d) - x0)).sum::<f64>()
    };
    let nd = first.bbox.ndim();
    if members.iter().any(|d| d.bbox.ndim() != nd) {
        return Err(Error::InvalidArgument("cluster mixes 2D and 3D boxes".into()));
    }
    let mut bbox = first.bbox;
    for a in 0..nd {
        bbox.min[a] = mean(&|d| d.bbox.min[a]);
        bbox.max[a] = mean(&|d| d.bbox.max[a]);
    }
    let objectness = mean(&|d| d.objectness);
    let grading = match &first.grading {
        Grading::Score(s0) => {
            let mut s = *s0;
            for (d, wi) in members.iter().zip(&w) {
                match d.grading {
                    Grading::Score(v) => s += wi * (v - s0),
                    _ => return Err(Error::InvalidArgument("cluster mixes grading kinds".into())),
                }
            }
            Grading::Score(s)
        }
        Grading::Probabilities(p0) => {
            let mut acc = vec![0.0; p0.len()];
            for (d, wi) in members.iter().zip(&w) {
                match &d.grading {
                    Grading::Probabilities(p) if p.len() == acc.len() => {
                        for (a, v) in acc.iter_mut().zip(p) {
                            *a += wi * v;
                        }
                    }
                    _ => return Err(Error::InvalidArgument("cluster mixes grading kinds".into())),
                }
            }
            Grading::Probabilities(acc)
        }
    };
    Ok(Detection {
        bbox,
        objectness,
        grading,
    })
}

/// Greedy clustering: the strongest unassigned detection (objectness desc,
/// then member, then view, then input position) seeds a cluster that takes
/// every unassigned detection overlapping it by more than the threshold;
/// each cluster is replaced by its objectness-weighted mean.
pub fn weighted_box_clustering(dets: &[SourcedDetection], cfg: &ClusterConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.detection
            .objectness
            .total_cmp(&da.detection.objectness)
            .then(da.member.cmp(&db.member))
            .then(da.view.cmp(&db.view))
            .then(a.cmp(&b))
    });
    let mut used = vec![false; dets.len()];
    let mut out = Vec::new();
    for &seed in &order {
        if used[seed] {
            continue;
        }
        let mut cluster = Vec::new();
        for &j in &order {
            if used[j] {
                continue;
            }
            if j == seed || iou(&dets[seed].detection.bbox, &dets[j].detection.bbox)? > cfg.iou_threshold {
                used[j] = true;
                cluster.push(&dets[j].detection);
            }
        }
        if cluster.len() >= cfg.min_cluster_size {
            out.push(weighted_mean(&cluster)?);
        }
    }
    Ok(out)
}
