use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxCoder;
use crate::losses::{LossWeights, DEFAULT_NEGATIVE_RATIO};

/// Which second-stage head grades detected objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingHead {
    /// One unbounded scalar per RoI, trained with smooth L1 on raw scores.
    Regressor,
    /// One logit per category, trained with softmax cross-entropy.
    Classifier,
}

impl GradingHead {
    pub fn name(&self) -> &'static str {
        match self {
            GradingHead::Regressor => "regressor",
            GradingHead::Classifier => "classifier",
        }
    }
}

impl std::str::FromStr for GradingHead {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regressor" => Ok(GradingHead::Regressor),
            "classifier" => Ok(GradingHead::Classifier),
            other => Err(Error::Config(format!(
                "unknown grading head {other:?} (expected regressor or classifier)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Base in-plane size per pyramid level, in voxels.
    pub sizes: Vec<f64>,
    /// Multipliers applied to each base size.
    pub scales: Vec<f64>,
    /// Height/width ratios.
    pub ratios: Vec<f64>,
    /// Anchor lengths along z (3D only).
    pub z_sizes: Vec<f64>,
}

impl AnchorConfig {
    pub fn per_cell(&self, dimensionality: usize) -> usize {
        let z = if dimensionality == 3 { self.z_sizes.len() } else { 1 };
        self.scales.len() * self.ratios.len() * z
    }
}

/// Architecture and training hyper-parameters shared by both variants.
///
/// Pool sizes are given as `(x, y, z)`; 2D models use `z = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub dimensionality: usize,
    pub in_channels: usize,
    /// Output channels of the stem and of each of the four downsampling stages.
    pub backbone_channels: [usize; 5],
    /// Residual block after each downsampling stage.
    pub residual_blocks: bool,
    /// z stride of the stem and of each stage (all 1 for 2D).
    pub z_strides: [usize; 5],
    /// Channels of every pyramid map and of the proposal network.
    pub rpn_feature_maps: usize,
    /// Number of pyramid levels, starting at stride 4.
    pub pyramid_levels: usize,
    pub grading_head: GradingHead,
    pub class_count: usize,
    /// Initial bias of the regressor output, in score units. Training fills
    /// in the middle of the dataset's scale when unset.
    pub regressor_init: Option<f64>,
    pub roialign_pool_grading: [usize; 3],
    pub roialign_pool_mask: [usize; 3],
    pub roialign_sampling: usize,
    /// RoIs with sqrt(in-plane area) below this pool from the finest level.
    pub roi_canonical_size: f64,
    pub head_hidden: usize,
    pub mask_channels: usize,
    /// Second-stage positive threshold (IoU >= this).
    pub proposal_match_iou: f64,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    pub anchors: AnchorConfig,
    pub pre_nms_train: usize,
    pub post_nms_train: usize,
    pub pre_nms_test: usize,
    pub post_nms_test: usize,
    pub rpn_nms_iou: f64,
    pub negative_ratio: f64,
    pub head_max_positives: usize,
    pub add_gt_proposals: bool,
    pub final_nms_iou: f64,
    pub min_objectness: f64,
    pub max_detections: usize,
    pub box_coder: BoxCoder,
    pub loss_weights: LossWeights,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            dimensionality: 2,
            in_channels: 1,
            backbone_channels: [16, 32, 64, 128, 128],
            residual_blocks: true,
            z_strides: [1; 5],
            rpn_feature_maps: 64,
            pyramid_levels: 4,
            grading_head: GradingHead::Regressor,
            class_count: 5,
            regressor_init: None,
            roialign_pool_grading: [7, 7, 1],
            roialign_pool_mask: [14, 14, 1],
            roialign_sampling: 2,
            roi_canonical_size: 32.0,
            head_hidden: 256,
            mask_channels: 32,
            proposal_match_iou: 0.3,
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            anchors: AnchorConfig {
                sizes: vec![8.0, 16.0, 32.0, 64.0],
                scales: vec![1.0, 1.5],
                ratios: vec![0.5, 1.0, 2.0],
                z_sizes: vec![2.0, 4.0, 8.0],
            },
            pre_nms_train: 2000,
            post_nms_train: 300,
            pre_nms_test: 2000,
            post_nms_test: 300,
            rpn_nms_iou: 0.7,
            negative_ratio: DEFAULT_NEGATIVE_RATIO,
            head_max_positives: 32,
            add_gt_proposals: true,
            final_nms_iou: 0.1,
            min_objectness: 0.05,
            max_detections: 50,
            box_coder: BoxCoder::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl DetectorConfig {
    /// Full-size settings: 64 proposal-network maps, pools (7,7,3) and (14,14,5) in 3D.
    pub fn full(dimensionality: usize, head: GradingHead) -> Self {
        let mut c = DetectorConfig {
            dimensionality,
            grading_head: head,
            ..Default::default()
        };
        if dimensionality == 3 {
            c.roialign_pool_grading = [7, 7, 3];
            c.roialign_pool_mask = [14, 14, 5];
        }
        c
    }

    /// Small 2D network for the toy benchmark on a CPU.
    pub fn desk(head: GradingHead) -> Self {
        DetectorConfig {
            grading_head: head,
            backbone_channels: [8, 16, 32, 32, 32],
            rpn_feature_maps: 32,
            head_hidden: 128,
            mask_channels: 16,
            anchors: AnchorConfig {
                sizes: vec![8.0, 16.0, 32.0, 64.0],
                scales: vec![1.0, 1.5],
                ratios: vec![1.0],
                z_sizes: vec![],
            },
            pre_nms_train: 500,
            post_nms_train: 100,
            pre_nms_test: 500,
            post_nms_test: 50,
            head_max_positives: 16,
            max_detections: 20,
            ..Default::default()
        }
    }

    /// Same network with the other grading head.
    pub fn with_head(&self, head: GradingHead) -> Self {
        DetectorConfig {
            grading_head: head,
            ..self.clone()
        }
    }

    pub fn grading_outputs(&self) -> usize {
        match self.grading_head {
            GradingHead::Regressor => 1,
            GradingHead::Classifier => self.class_count,
        }
    }

    /// In-plane stride of pyramid level `l`.
    pub fn level_stride(&self, l: usize) -> usize {
        1 << (l + 2)
    }

    /// z stride of pyramid level `l`.
    pub fn level_z_stride(&self, l: usize) -> usize {
        self.z_strides[..l + 2].iter().product()
    }

    /// Required divisor of input `(x, y, z)` extents.
    pub fn input_multiple(&self) -> [usize; 3] {
        let l = self.pyramid_levels - 1;
        let s = self.level_stride(l);
        [s, s, self.level_z_stride(l)]
    }

    /// Pool size `(d, h, w)` for tensors.
    pub(crate) fn pool_dhw(p: [usize; 3]) -> [usize; 3] {
        [p[2], p[1], p[0]]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !matches!(self.dimensionality, 2 | 3) {
            return err(format!("dimensionality must be 2 or 3, got {}", self.dimensionality));
        }
        if !(1..=4).contains(&self.pyramid_levels) {
            return err(format!("pyramid_levels must be 1..=4, got {}", self.pyramid_levels));
        }
        if self.anchors.sizes.len() < self.pyramid_levels {
            return err("one anchor size per pyramid level required".into());
        }
        if self.anchors.per_cell(self.dimensionality) == 0 {
            return err("anchor scales/ratios (and z sizes in 3D) must be non-empty".into());
        }
        for p in [self.roialign_pool_grading, self.roialign_pool_mask] {
            if p.contains(&0) {
                return err(format!("pool sizes must be positive, got {p:?}"));
            }
            if self.dimensionality == 2 && p[2] != 1 {
                return err(format!("2D pool sizes need z = 1, got {p:?}"));
            }
        }
        if self.dimensionality == 2 && self.z_strides.iter().any(|&s| s != 1) {
            return err("2D models cannot stride along z".into());
        }
        for (name, v) in [
            ("proposal_match_iou", self.proposal_match_iou),
            ("rpn_positive_iou", self.rpn_positive_iou),
            ("rpn_negative_iou", self.rpn_negative_iou),
            ("rpn_nms_iou", self.rpn_nms_iou),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return err(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.grading_head == GradingHead::Classifier && self.class_count < 2 {
            return err("classifier needs at least 2 categories".into());
        }
        if self.negative_ratio <= 0.0 {
            return err("negative_ratio must be > 0".into());
        }
        Ok(())
    }
}
