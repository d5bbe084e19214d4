use std::fmt;

use serde::{Deserialize, Serialize};

use super::matching::{match_detections, GtObject, MatchResult};
use super::precision::{average_precision, bin_accuracy, TpKind};
use super::BinningScheme;
use crate::detector::Detection;
use crate::error::{Error, Result};

/// Mean and population standard deviation of per-fold values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Absent with fewer than two folds.
    pub std: Option<f64>,
    pub folds: usize,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.3} ± {:.3}", self.mean, s),
            None => write!(f, "{:.3}", self.mean),
        }
    }
}

pub fn aggregate_folds(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no fold values to aggregate".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite fold value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
    Ok(Aggregate {
        mean,
        std,
        folds: values.len(),
    })
}

/// Metrics of one fold (or one pooled test set).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    /// Absent without ground-truth objects.
    pub ap10: Option<f64>,
    pub avp10: Option<f64>,
    /// Absent without detection TPs.
    pub bin_accuracy: Option<f64>,
    pub gt_count: usize,
    pub detection_count: usize,
    pub detection_tps: usize,
    pub graded_tps: usize,
}

impl FoldMetrics {
    pub fn from_matches(results: &[MatchResult]) -> Self {
        FoldMetrics {
            ap10: average_precision(results, TpKind::Detection),
            avp10: average_precision(results, TpKind::Graded),
            bin_accuracy: bin_accuracy(results),
            gt_count: results.iter().map(|r| r.gt_count()).sum(),
            detection_count: results.iter().map(|r| r.detections.len()).sum(),
            detection_tps: results.iter().map(|r| r.detection_tps()).sum(),
            graded_tps: results.iter().map(|r| r.graded_tps()).sum(),
        }
    }
}

/// Match every scene and pool the results. `scenes` pairs detections with
/// ground truth per scene.
pub fn evaluate_scenes(
    scenes: &[(Vec<Detection>, Vec<GtObject>)],
    scheme: &BinningScheme,
    iou_threshold: f64,
) -> Result<(FoldMetrics, Vec<MatchResult>)> {
    let results = scenes
        .iter()
        .map(|(d, g)| match_detections(d, g, scheme, iou_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok((FoldMetrics::from_matches(&results), results))
}

/// Fold means and spreads of AP₁₀, AVP₁₀ and bin accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap10: Option<Aggregate>,
    pub avp10: Option<Aggregate>,
    pub bin_accuracy: Option<Aggregate>,
    pub per_fold: Vec<FoldMetrics>,
}

impl MetricsReport {
    /// Aggregate over the folds where each metric is defined.
    pub fn from_folds(per_fold: Vec<FoldMetrics>) -> Result<Self> {
        let agg = |f: fn(&FoldMetrics) -> Option<f64>| -> Result<Option<Aggregate>> {
            let v: Vec<f64> = per_fold.iter().filter_map(f).collect();
            if v.is_empty() {
                Ok(None)
            } else {
                aggregate_folds(&v).map(Some)
            }
        };
        Ok(MetricsReport {
            ap10: agg(|m| m.ap10)?,
            avp10: agg(|m| m.avp10)?,
            bin_accuracy: agg(|m| m.bin_accuracy)?,
            per_fold,
        })
    }
}
