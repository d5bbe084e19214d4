use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, Evaluation, DETECTIONS_FILE, GROUND_TRUTH_FILE, METRICS_FILE};
use super::figure::{render_overlay, write_png};
use super::report::ResultsTable;
use super::train::train;
use crate::dataset::{read_manifest, Dataset};
use crate::detector::{Detection, GradingHead};
use crate::error::{Error, Result};
use crate::eval_metrics::{read_jsonl, DetectionRecord, GtObject, GtRecord};

/// Both variants trained and evaluated with the same seed and fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub fold: usize,
    pub regressor: Evaluation,
    pub classifier: Evaluation,
    pub regressor_dir: PathBuf,
    pub classifier_dir: PathBuf,
    pub batch_count: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub table: ResultsTable,
    pub runs: Vec<PairedRun>,
}

/// Train and evaluate both variants for every `(fold, seed)` pair. Fails if
/// the two variants of a pair did not see byte-identical batches.
pub fn compare(base: &ExperimentConfig, folds: &[usize], seeds: &[u64]) -> Result<Comparison> {
    let mut runs = Vec::new();
    for &fold in folds {
        for &seed in seeds {
            let started = std::time::Instant::now();
            let pair_dir = base.output_dir.join(format!("fold{fold}_seed{seed}"));
            let mut evals = Vec::new();
            let mut digests = Vec::new();
            let mut dirs = Vec::new();
            for variant in [GradingHead::Regressor, GradingHead::Classifier] {
                let cfg = ExperimentConfig {
                    seed,
                    fold,
                    output_dir: pair_dir.join(variant.name()),
                    ..base.with_variant(variant)
                };
                let record = train(&cfg)?;
                evals.push(evaluate(&cfg, &record)?);
                digests.push(record.batch_digests);
                dirs.push(cfg.output_dir.clone());
            }
            if digests[0] != digests[1] {
                return Err(Error::validation(
                    format!("fold {fold}, seed {seed}"),
                    "the two variants consumed different batches",
                ));
            }
            let classifier = evals.pop().expect("two evaluations");
            let regressor = evals.pop().expect("two evaluations");
            runs.push(PairedRun {
                seed,
                fold,
                regressor,
                classifier,
                regressor_dir: dirs[0].clone(),
                classifier_dir: dirs[1].clone(),
                batch_count: digests[0].len(),
                wall_seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    let evals: Vec<Evaluation> = runs
        .iter()
        .flat_map(|r| [r.regressor.clone(), r.classifier.clone()])
        .collect();
    let comparison = Comparison {
        table: ResultsTable::from_evaluations(&evals)?,
        runs,
    };
    comparison.table.write(&base.output_dir)?;
    let path = base.output_dir.join("comparison.json");
    let json = serde_json::to_vec_pretty(&comparison).expect("comparison serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    if let Some(first) = comparison.runs.first() {
        write_figures(
            &base.dataset,
            &[first.regressor_dir.as_path(), first.classifier_dir.as_path()],
            &base.output_dir.join("figures"),
            3,
        )?;
    }
    Ok(comparison)
}

/// Read an evaluation directory written by [`evaluate`].
pub fn read_evaluation(dir: &Path) -> Result<Evaluation> {
    let path = dir.join(METRICS_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut ev: Evaluation = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
    ev.detections = read_jsonl(&dir.join(DETECTIONS_FILE))?;
    ev.ground_truth = read_jsonl(&dir.join(GROUND_TRUTH_FILE))?;
    Ok(ev)
}

/// Table over evaluation directories, plus overlay figures of the first
/// `figures` scenes shared by all of them.
pub fn report(eval_dirs: &[PathBuf], dataset: Option<&Path>, out_dir: &Path, figures: usize) -> Result<ResultsTable> {
    let evals = eval_dirs
        .iter()
        .map(|d| read_evaluation(d))
        .collect::<Result<Vec<_>>>()?;
    let table = ResultsTable::from_evaluations(&evals)?;
    table.write(out_dir)?;
    if let Some(ds) = dataset {
        let dirs: Vec<&Path> = eval_dirs.iter().map(|p| p.as_path()).collect();
        write_figures(ds, &dirs, &out_dir.join("figures"), figures)?;
    }
    Ok(table)
}

/// One PNG per scene: ground truth, then each evaluation's detections.
pub fn write_figures(dataset: &Path, eval_dirs: &[&Path], out_dir: &Path, count: usize) -> Result<Vec<PathBuf>> {
    let evals = eval_dirs
        .iter()
        .map(|d| read_evaluation(d))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = evals.first() else {
        return Ok(Vec::new());
    };
    let mut scene_ids: Vec<String> = first.ground_truth.iter().map(|g| g.scene_id.clone()).collect();
    scene_ids.dedup();
    scene_ids.truncate(count);
    if scene_ids.is_empty() {
        return Ok(Vec::new());
    }
    let scheme = read_manifest(dataset)?.binning;
    let data = Dataset::read_subset(dataset, &scene_ids)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let by_scene = |recs: &[DetectionRecord]| -> BTreeMap<String, Vec<Detection>> {
        let mut m: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for r in recs {
            m.entry(r.scene_id.clone()).or_default().push(r.detection());
        }
        m
    };
    let per_eval: Vec<BTreeMap<String, Vec<Detection>>> = evals.iter().map(|e| by_scene(&e.detections)).collect();
    let mut written = Vec::new();
    for id in &scene_ids {
        let scene = data.scene(id).expect("subset holds requested scenes");
        let gts: Vec<GtObject> = first
            .ground_truth
            .iter()
            .filter(|g: &&GtRecord| &g.scene_id == id)
            .map(|g| GtObject {
                bbox: g.bbox,
                score: g.score,
            })
            .collect();
        let empty = Vec::new();
        let panels: Vec<(&str, &[Detection])> = evals
            .iter()
            .zip(&per_eval)
            .map(|(e, m)| (e.variant.name(), m.get(id).unwrap_or(&empty).as_slice()))
            .collect();
        let z = scene.volume.dims()[2] / 2;
        let img = render_overlay(&scene.volume, z, &gts, &panels, &scheme)?;
        let path = out_dir.join(format!("{id}.png"));
        write_png(&img, &path)?;
        written.push(path);
    }
    Ok(written)
}
