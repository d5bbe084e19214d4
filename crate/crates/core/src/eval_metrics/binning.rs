use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps continuous scores onto ordered categories.
///
/// Edges sit at the midpoints between neighbouring centers. A score lying
/// exactly on an edge belongs to the upper bin; scores beyond the outer edges
/// clamp to the first or last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinningScheme {
    centers: Vec<f64>,
    edges: Vec<f64>,
}

impl BinningScheme {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::Config("a binning scheme needs at least 2 centers".into()));
        }
        if centers.iter().any(|c| !c.is_finite()) || centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bin centers must be finite and strictly increasing: {centers:?}"
            )));
        }
        let edges = centers.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(BinningScheme { centers, edges })
    }

    /// Integer grades `lo..=hi` as bin centers (e.g. malignancy 1..5).
    pub fn integer_scale(lo: i32, hi: i32) -> Result<Self> {
        Self::new((lo..=hi).map(f64::from).collect())
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Zero-based bin index of `score`.
    pub fn bin(&self, score: f64) -> Result<usize> {
        if score.is_nan() {
            return Err(Error::Numeric("cannot bin a NaN score".into()));
        }
        Ok(self.edges.partition_point(|&e| e <= score))
    }

    /// One-based category of `score`, the convention used in annotations.
    pub fn category(&self, score: f64) -> Result<u32> {
        self.bin(score).map(|b| b as u32 + 1)
    }

    pub fn center_of_category(&self, category: u32) -> Option<f64> {
        (category as usize)
            .checked_sub(1)
            .and_then(|i| self.centers.get(i).copied())
    }
}

impl TryFrom<Vec<f64>> for BinningScheme {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        BinningScheme::new(v)
    }
}

impl From<BinningScheme> for Vec<f64> {
    fn from(s: BinningScheme) -> Vec<f64> {
        s.centers
    }
}
