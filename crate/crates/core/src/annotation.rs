//! Ground-truth objects shared by the toy generator, the data pipeline and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_metrics::BinningScheme;
use crate::geometry::BBox;

/// Parametric description of an instance mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskRef {
    /// Voxels whose center lies within `radius` of the axis at `(cx, cy)`
    /// and whose z index is in `[z_min, z_max)`.
    Cylinder {
        cx: f64,
        cy: f64,
        radius: f64,
        z_min: usize,
        z_max: usize,
    },
}

impl MaskRef {
    /// Membership of the point `(x, y, z)` given in continuous coordinates.
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        match *self {
            MaskRef::Cylinder {
                cx,
                cy,
                radius,
                z_min,
                z_max,
            } => {
                let zi = z.floor();
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                zi >= z_min as f64 && zi < z_max as f64 && d2 <= radius * radius
            }
        }
    }
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoIAnnotation {
    pub id: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// One entry per rater; a single entry for the toy benchmark.
    pub rater_scores: Vec<f64>,
    /// Exact radius for toy objects, rater mean for multi-rater data.
    pub exact_score: f64,
    /// One-based category of `exact_score`.
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskRef>,
}

impl RoIAnnotation {
    /// Build from rater scores; the exact score is their mean.
    pub fn from_raters(id: u32, bbox: BBox, rater_scores: Vec<f64>, scheme: &BinningScheme) -> Result<Self> {
        if rater_scores.is_empty() {
            return Err(Error::Data(format!("annotation {id} has no rater scores")));
        }
        let exact_score = mean(&rater_scores);
        Ok(RoIAnnotation {
            id,
            bbox,
            category: scheme.category(exact_score)?,
            rater_scores,
            exact_score,
            mask: None,
        })
    }

    /// Whether `(x, y, z)` lies inside the instance; falls back to the box.
    pub fn mask_contains(&self, x: f64, y: f64, z: f64) -> bool {
        match &self.mask {
            Some(m) => m.contains(x, y, z),
            None => {
                let p = [x, y, z];
                (0..self.bbox.ndim()).all(|a| p[a] >= self.bbox.min[a] && p[a] < self.bbox.max[a])
            }
        }
    }

    pub fn validate(&self, context: &str, scheme: &BinningScheme, score_range: Option<(f64, f64)>) -> Result<()> {
        let ctx = || format!("{context}, annotation {}", self.id);
        if !self.bbox.is_valid() {
            return Err(Error::validation(ctx(), "box min must be < max on every axis"));
        }
        if self.rater_scores.is_empty() {
            return Err(Error::validation(ctx(), "no rater scores"));
        }
        if let Some((lo, hi)) = score_range {
            if let Some(s) = self.rater_scores.iter().find(|s| !(lo..=hi).contains(*s)) {
                return Err(Error::validation(
                    ctx(),
                    format!("rater score {s} outside [{lo}, {hi}]"),
                ));
            }
        }
        if self.category < 1 || self.category as usize > scheme.len() {
            return Err(Error::validation(
                ctx(),
                format!("category {} outside 1..={}", self.category, scheme.len()),
            ));
        }
        if self.rater_scores.len() > 1 {
            let m = mean(&self.rater_scores);
            if (m - self.exact_score).abs() > 1e-9 * m.abs().max(1.0) {
                return Err(Error::validation(
                    ctx(),
                    format!("exact score {} differs from rater mean {m}", self.exact_score),
                ));
            }
        }
        if scheme.category(self.exact_score)? != self.category {
            return Err(Error::validation(
                ctx(),
                format!(
                    "category {} does not match binned exact score {}",
                    self.category, self.exact_score
                ),
            ));
        }
        Ok(())
    }
}

/// Mean computed over the sorted values so the result does not depend on rater order.
pub(crate) fn mean(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / v.len() as f64
}
