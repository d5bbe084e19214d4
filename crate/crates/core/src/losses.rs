//! Categorization losses and stochastic hard-negative mining.
//!
//! The classification head is trained with softmax cross-entropy, the
//! regression head with smooth L1. Cross-entropy only looks at the target
//! logit and the log-partition, so every off-target class is penalized the
//! same way no matter how close it is to the target on the grading scale;
//! smooth L1 grows with the distance between prediction and target.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Target class `index` out of `class_count` mutually exclusive classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoricalTarget {
    index: usize,
    class_count: usize,
}

impl CategoricalTarget {
    pub fn new(index: usize, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        if index >= class_count {
            return Err(Error::InvalidArgument(format!(
                "target index {index} out of range for {class_count} classes"
            )));
        }
        Ok(CategoricalTarget { index, class_count })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {v}")));
    }
    Ok(())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    check_finite(z)?;
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `-z_i + log Σ_k exp(z_k)`.
pub fn cross_entropy(z: &[f64], target: CategoricalTarget) -> Result<f64> {
    Ok(cross_entropy_with_grad(z, target)?.0)
}

/// Cross-entropy and its gradient `softmax(z) - onehot(i)` with respect to the logits.
pub fn cross_entropy_with_grad(z: &[f64], target: CategoricalTarget) -> Result<(f64, Vec<f64>)> {
    if z.len() != target.class_count {
        return Err(Error::InvalidArgument(format!(
            "{} logits for a {}-class target",
            z.len(),
            target.class_count
        )));
    }
    check_finite(z)?;
    let loss = log_sum_exp(z) - z[target.index];
    let mut grad = softmax(z)?;
    grad[target.index] -= 1.0;
    Ok((loss, grad))
}

/// Smooth L1 between prediction `p` and target `t`:
/// `0.5 (t - p)^2` when `|t - p| < 1`, otherwise `|t - p| - 0.5`.
pub fn smooth_l1(p: f64, t: f64) -> f64 {
    let d = (t - p).abs();
    if d < 1.0 {
        0.5 * d * d
    } else {
        d - 0.5
    }
}

/// Derivative of [`smooth_l1`] with respect to the prediction; bounded by 1 in magnitude.
pub fn smooth_l1_grad(p: f64, t: f64) -> f64 {
    let d = p - t;
    d.clamp(-1.0, 1.0)
}

/// Binary cross-entropy on a logit, with gradient w.r.t. the logit.
pub fn bce_with_logits(logit: f64, target: f64) -> (f64, f64) {
    // max(x,0) - x t + log(1 + e^{-|x|})
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - target)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of negatives selected per positive by default.
pub const DEFAULT_NEGATIVE_RATIO: f64 = 3.0;

/// Sample negatives without replacement, with probability proportional to
/// their foreground score.
///
/// Selects `max(1, round(ratio * n_positives))` candidates (capped by the
/// pool), returned in draw order. Zero-score candidates are only taken once
/// every positive-score candidate has been drawn, uniformly among themselves.
pub fn mine_hard_negatives(
    candidate_scores: &[f64],
    n_positives: usize,
    ratio: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if ratio.is_nan() || ratio <= 0.0 {
        return Err(Error::InvalidArgument(format!("mining ratio must be > 0, got {ratio}")));
    }
    if candidate_scores.is_empty() {
        return Ok(Vec::new());
    }
    let wanted = ((ratio * n_positives as f64).round() as usize)
        .max(1)
        .min(candidate_scores.len());
    // Efraimidis-Spirakis: sort by u^(1/w), i.e. ln(u)/w, descending.
    let mut keyed: Vec<(f64, f64, usize)> = candidate_scores
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let tie: f64 = rng.random();
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, tie, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    Ok(keyed.into_iter().take(wanted).map(|(_, _, i)| i).collect())
}

/// Batch reduction and per-component weights for the detector loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rpn_objectness: f64,
    pub rpn_box: f64,
    pub grading: f64,
    pub box_refine: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rpn_objectness: 1.0,
            rpn_box: 1.0,
            grading: 1.0,
            box_refine: 1.0,
            mask: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_uniform_and_known_value() {
        let q = softmax(&[0.0; 5]).unwrap();
        for v in q {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        }
        let q = softmax(&[2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        // e^2 / (e^2 + 4)
        assert_abs_diff_eq!(q[0], 0.648_785_644_284, epsilon = 1e-9);
        assert!(softmax(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn cross_entropy_known_values() {
        let t = CategoricalTarget::new(0, 5).unwrap();
        assert_abs_diff_eq!(cross_entropy(&[0.0; 5], t).unwrap(), 5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            cross_entropy(&[2.0, 0.0, 0.0, 0.0, 0.0], t).unwrap(),
            0.432_652_902_992,
            epsilon = 1e-9
        );
        assert!(CategoricalTarget::new(5, 5).is_err());
        assert!(cross_entropy(&[0.0; 4], t).is_err());
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(3.0, 3.0), 0.0);
        assert_eq!(smooth_l1(0.0, 1.0), 0.5);
        assert_eq!(smooth_l1(0.0, 3.0), 2.5);
        assert_eq!(smooth_l1_grad(10.0, 0.0), 1.0);
        assert_eq!(smooth_l1_grad(-10.0, 0.0), -1.0);
    }

    #[test]
    fn bce_matches_direct_formula() {
        for &(x, t) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 0.0), (0.0, 1.0)] {
            let p: f64 = sigmoid(x);
            let direct = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            assert_abs_diff_eq!(bce_with_logits(x, t).0, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn mining_edge_cases() {
        let mut rng = stream(1, Stream::Mining, &[]);
        assert!(mine_hard_negatives(&[], 3, 3.0, &mut rng).unwrap().is_empty());
        assert!(mine_hard_negatives(&[0.5], 1, 0.0, &mut rng).is_err());
        // at least one negative even without positives
        assert_eq!(mine_hard_negatives(&[0.1, 0.2], 0, 3.0, &mut rng).unwrap().len(), 1);
        // capped by pool size, no repeats
        let mut sel = mine_hard_negatives(&[0.1, 0.2, 0.3], 5, 3.0, &mut rng).unwrap();
        sel.sort();
        assert_eq!(sel, vec![0, 1, 2]);
        for _ in 0..50 {
            let sel = mine_hard_negatives(&[0.0, 0.0, 1.0, 0.0], 1, 2.0, &mut rng).unwrap();
            assert_eq!(sel[0], 2);
        }
    }
}
