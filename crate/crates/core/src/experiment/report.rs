use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::Evaluation;
use crate::detector::GradingHead;
use crate::error::{Error, Result};
use crate::eval_metrics::{Aggregate, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: GradingHead,
    pub report: MetricsReport,
}

/// One row per variant: AVP₁₀, AP₁₀ and bin accuracy as mean ± std over
/// folds or repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
}

impl ResultsTable {
    /// Group evaluations by variant, regressor row first.
    pub fn from_evaluations(evals: &[Evaluation]) -> Result<Self> {
        if evals.is_empty() {
            return Err(Error::InvalidArgument("no evaluations to report".into()));
        }
        let mut rows = Vec::new();
        for variant in [GradingHead::Regressor, GradingHead::Classifier] {
            let per_fold: Vec<_> = evals
                .iter()
                .filter(|e| e.variant == variant)
                .map(|e| e.metrics)
                .collect();
            if !per_fold.is_empty() {
                rows.push(TableRow {
                    variant,
                    report: MetricsReport::from_folds(per_fold)?,
                });
            }
        }
        Ok(ResultsTable { rows })
    }

    pub fn row(&self, variant: GradingHead) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        fn cell(a: &Option<Aggregate>) -> String {
            match a {
                Some(Aggregate { mean, std: Some(s), .. }) => format!("{mean:.3} ± {s:.3}"),
                Some(Aggregate { mean, std: None, .. }) => format!("{mean:.3} ± n/a"),
                None => "n/a".to_string(),
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>15} {:>15} {:>15} {:>6}",
            "Model", "AVP10", "AP10", "Bin Accuracy", "Folds"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>15} {:>15} {:>15} {:>6}",
                r.variant.name(),
                cell(&r.report.avp10),
                cell(&r.report.ap10),
                cell(&r.report.bin_accuracy),
                r.report.per_fold.len()
            );
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("table serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Write `results.txt` and `results.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join("results.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        self.write_json(&dir.join("results.json"))
    }
}
