use serde::{Deserialize, Serialize};

use super::clustering::{weighted_box_clustering, ClusterConfig, SourcedDetection};
use super::stacking::{consolidate_2d_to_3d, SliceDetection, DEFAULT_Z_LINK_IOU};
use super::views::{mirror_views, ViewTransform};
use crate::detector::{final_nms, Detection, Detector};
use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Predict on the four mirror views, or on the input only.
    pub mirror_views: bool,
    pub cluster: ClusterConfig,
    pub z_link_iou: f64,
    /// Final NMS threshold; `None` uses the members' configured value.
    pub final_nms_iou: Option<f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            mirror_views: true,
            cluster: ClusterConfig::default(),
            z_link_iou: DEFAULT_Z_LINK_IOU,
            final_nms_iou: None,
        }
    }
}

fn predict_views(members: &[Detector], input: &Volume, cfg: &EnsembleConfig) -> Result<Vec<SourcedDetection>> {
    let views = if cfg.mirror_views {
        mirror_views(input.dims())
    } else {
        vec![ViewTransform::identity(input.dims())]
    };
    let mut pooled = Vec::new();
    for (m, det) in members.iter().enumerate() {
        for (v, view) in views.iter().enumerate() {
            let transformed = if view.is_identity() {
                input.clone()
            } else {
                view.apply(input)
            };
            for d in det.predict(&transformed)? {
                pooled.push(SourcedDetection {
                    detection: Detection {
                        bbox: view.inverse_box(&d.bbox),
                        ..d
                    },
                    member: m,
                    view: v,
                });
            }
        }
    }
    Ok(pooled)
}

/// Predict with every member on every view, map boxes back, cluster, and
/// finish with objectness-keyed NMS. A 2D model applied to a volume with
/// several slices predicts slice by slice and stacks the results along z
/// before the final NMS.
pub fn run_ensemble(members: &[Detector], volume: &Volume, cfg: &EnsembleConfig) -> Result<Vec<Detection>> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one member".into()))?;
    for m in &members[1..] {
        if m.config() != first.config() {
            return Err(Error::Config(
                "ensemble members have different detector configurations".into(),
            ));
        }
    }
    let c = first.config();
    let nms_iou = cfg.final_nms_iou.unwrap_or(c.final_nms_iou);
    let dims = volume.dims();
    let consolidated = if c.dimensionality == 2 && dims[2] > 1 {
        let mut per_slice = Vec::new();
        for z in 0..dims[2] {
            let slice = volume.slice_z(z)?;
            let pooled = predict_views(members, &slice, cfg)?;
            for d in weighted_box_clustering(&pooled, &cfg.cluster)? {
                per_slice.push(SliceDetection { slice: z, detection: d });
            }
        }
        consolidate_2d_to_3d(&per_slice, cfg.z_link_iou)?
    } else {
        let pooled = predict_views(members, volume, cfg)?;
        weighted_box_clustering(&pooled, &cfg.cluster)?
    };
    Ok(final_nms(consolidated, nms_iou, c.max_detections))
}
