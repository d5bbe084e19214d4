use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{gt_objects, RunRecord};
use crate::dataset::{Dataset, SceneRecord};
use crate::detector::{Checkpoint, Detection, Detector, GradingHead};
use crate::error::{Error, Result};
use crate::eval_metrics::{evaluate_scenes, write_jsonl, DetectionRecord, FoldMetrics, GtObject, GtRecord, EVAL_IOU};
use crate::inference::run_ensemble;

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

/// Test-set outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: GradingHead,
    pub seed: u64,
    pub fold: usize,
    pub metrics: FoldMetrics,
    #[serde(skip)]
    pub detections: Vec<DetectionRecord>,
    #[serde(skip)]
    pub ground_truth: Vec<GtRecord>,
}

/// Load the kept checkpoints of a run, best first.
pub fn load_members(record: &RunRecord) -> Result<Vec<Detector>> {
    if record.checkpoints.is_empty() {
        return Err(Error::Data("run has no checkpoints".into()));
    }
    record
        .checkpoints
        .iter()
        .map(|c| Checkpoint::read(&c.path)?.into_detector())
        .collect()
}

/// Score any detection source on the listed scenes against exact ground truth.
pub fn evaluate_with<F>(
    data: &Dataset,
    ids: &[String],
    mut detect: F,
) -> Result<(FoldMetrics, Vec<DetectionRecord>, Vec<GtRecord>)>
where
    F: FnMut(&SceneRecord) -> Result<Vec<Detection>>,
{
    let mut pairs: Vec<(Vec<Detection>, Vec<GtObject>)> = Vec::with_capacity(ids.len());
    let mut det_records = Vec::new();
    let mut gt_records = Vec::new();
    for id in ids {
        let scene = data
            .scene(id)
            .ok_or_else(|| Error::Data(format!("test scene {id} missing")))?;
        let dets = detect(scene)?;
        det_records.extend(dets.iter().map(|d| DetectionRecord::new(id, d)));
        let gts = gt_objects(&scene.annotations);
        gt_records.extend(gts.iter().map(|g| GtRecord {
            scene_id: id.clone(),
            bbox: g.bbox,
            score: g.score,
        }));
        pairs.push((dets, gts));
    }
    let (metrics, _) = evaluate_scenes(&pairs, &data.manifest.binning, EVAL_IOU)?;
    Ok((metrics, det_records, gt_records))
}

/// Ensemble the run's kept checkpoints over mirror views on its test scenes,
/// and write detections, ground truth and metrics next to the run.
pub fn evaluate(cfg: &ExperimentConfig, record: &RunRecord) -> Result<Evaluation> {
    let members = load_members(record)?;
    let ids = &record.fold.test;
    if ids.is_empty() {
        return Err(Error::Data("the fold has no test scenes".into()));
    }
    let data = Dataset::read_subset(&cfg.dataset, ids)?;
    let (metrics, detections, ground_truth) =
        evaluate_with(&data, ids, |s| run_ensemble(&members, &s.volume, &cfg.ensemble))?;
    let ev = Evaluation {
        variant: cfg.variant,
        seed: cfg.seed,
        fold: cfg.fold,
        metrics,
        detections,
        ground_truth,
    };
    ev.write(&cfg.output_dir)?;
    Ok(ev)
}

impl Evaluation {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(DETECTIONS_FILE), &self.detections)?;
        write_jsonl(&dir.join(GROUND_TRUTH_FILE), &self.ground_truth)?;
        let path = dir.join(METRICS_FILE);
        let json = serde_json::to_vec_pretty(self).expect("evaluation serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
