use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data_pipeline::{BatchSampler, Fold, SplitPlan};
use crate::dataset::{read_manifest, Dataset};
use crate::detector::{train_step, Checkpoint, CheckpointMetadata, Detection, Detector, LossBreakdown};
use crate::error::{Error, Result};
use crate::eval_metrics::{evaluate_scenes, FoldMetrics, GtObject, EVAL_IOU};
use crate::nn::Adam;
use crate::rng::{stream, Stream};

pub const RUN_RECORD_FILE: &str = "run_record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub validation: FoldMetrics,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub path: PathBuf,
    pub epoch: usize,
    pub val_avp10: f64,
    pub val_ap10: f64,
}

/// Everything a training run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    /// Best checkpoints, ordered by validation AVP₁₀ then AP₁₀.
    pub checkpoints: Vec<CheckpointEntry>,
    /// One SHA-256 per training batch, in consumption order.
    pub batch_digests: Vec<String>,
    /// Scene ids loaded during training and validation.
    pub accessed_scenes: BTreeSet<String>,
    pub fold: Fold,
    pub wall_seconds: f64,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("record serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// The fold a config refers to.
pub fn resolve_fold(cfg: &ExperimentConfig) -> Result<Fold> {
    let plan = match &cfg.splits {
        Some(path) => SplitPlan::read(path)?,
        None => {
            let manifest = read_manifest(&cfg.dataset)?;
            let trainval = manifest.splits.get("trainval").ok_or_else(|| {
                Error::Data(format!(
                    "{} has no trainval split; run `split` first",
                    cfg.dataset.display()
                ))
            })?;
            let test = manifest.splits.get("test").cloned().unwrap_or_default();
            SplitPlan::holdout(trainval, &test, cfg.validation_scenes, cfg.seed)?
        }
    };
    plan.folds
        .get(cfg.fold)
        .cloned()
        .ok_or_else(|| Error::Config(format!("fold {} not in a {}-fold plan", cfg.fold, plan.folds.len())))
}

/// Predict every scene with one model and score against exact ground truth.
pub fn validate_model(det: &Detector, data: &Dataset, ids: &[String]) -> Result<FoldMetrics> {
    let mut scenes: Vec<(Vec<Detection>, Vec<GtObject>)> = Vec::with_capacity(ids.len());
    for id in ids {
        let s = data
            .scene(id)
            .ok_or_else(|| Error::Data(format!("validation scene {id} missing")))?;
        scenes.push((det.predict(&s.volume)?, gt_objects(&s.annotations)));
    }
    Ok(evaluate_scenes(&scenes, &data.manifest.binning, EVAL_IOU)?.0)
}

pub(crate) fn gt_objects(anns: &[crate::annotation::RoIAnnotation]) -> Vec<GtObject> {
    anns.iter()
        .map(|a| GtObject {
            bbox: a.bbox,
            score: a.exact_score,
        })
        .collect()
}

fn better(a: &CheckpointEntry, b: &CheckpointEntry) -> std::cmp::Ordering {
    b.val_avp10
        .total_cmp(&a.val_avp10)
        .then(b.val_ap10.total_cmp(&a.val_ap10))
        .then(a.epoch.cmp(&b.epoch))
}

/// Run the schedule of `cfg`, validating after each epoch and keeping the
/// `top_k` best checkpoints. The run record is written to the output
/// directory even when training aborts on a numeric failure.
pub fn train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let fold = resolve_fold(cfg)?;
    let mut wanted: Vec<String> = fold.train.iter().chain(&fold.val).cloned().collect();
    wanted.sort();
    wanted.dedup();
    if let Some(leak) = fold.test.iter().find(|t| wanted.contains(t)) {
        return Err(Error::Data(format!(
            "scene {leak} is both a test scene and a training/validation scene"
        )));
    }
    let data = Dataset::read_subset(&cfg.dataset, &wanted)?;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let mut det_cfg = cfg.detector_config();
    if det_cfg.regressor_init.is_none() {
        let c = data.manifest.binning.centers();
        det_cfg.regressor_init = Some((c[0] + c[c.len() - 1]) / 2.0);
    }
    let mut det = Detector::new(det_cfg, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, det.params());
    let sampler = BatchSampler {
        dataset: &data,
        train_ids: fold.train.clone(),
        crop_shape: cfg.crop_shape,
        fg_probability: cfg.fg_probability,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let mut record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        batch_digests: Vec::new(),
        accessed_scenes: wanted.iter().cloned().collect(),
        fold: fold.clone(),
        wall_seconds: 0.0,
        aborted: None,
    };
    let record_path = cfg.output_dir.join(RUN_RECORD_FILE);
    let result = run_epochs(
        cfg,
        &mut det,
        &mut adam,
        &sampler,
        &data,
        &fold,
        &ckpt_dir,
        &mut record,
        start,
    );
    record.wall_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = &result {
        record.aborted = Some(e.to_string());
    }
    record.write(&record_path)?;
    result.map(|_| record)
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    cfg: &ExperimentConfig,
    det: &mut Detector,
    adam: &mut Adam,
    sampler: &BatchSampler,
    data: &Dataset,
    fold: &Fold,
    ckpt_dir: &Path,
    record: &mut RunRecord,
    start: Instant,
) -> Result<()> {
    for epoch in 0..cfg.epochs {
        let mut mean = LossBreakdown::default();
        for b in 0..cfg.batches_per_epoch {
            let batch = sampler.batch(epoch, b)?;
            record.batch_digests.push(batch.digest());
            let mut rng = stream(cfg.seed, Stream::Mining, &[epoch as u64, b as u64]);
            let loss = train_step(det, adam, &batch, &mut rng).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            mean.accumulate(&loss, 1.0 / cfg.batches_per_epoch as f64);
        }
        let validation = validate_model(det, data, &fold.val)?;
        log::info!(
            "{} epoch {epoch}: loss {:.4} val AP {:?} AVP {:?}",
            cfg.variant.name(),
            mean.total,
            validation.ap10,
            validation.avp10
        );
        record.epochs.push(EpochRecord {
            epoch,
            loss: mean,
            validation,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        let entry = CheckpointEntry {
            path: ckpt_dir.join(format!("epoch_{epoch:03}.json")),
            epoch,
            val_avp10: validation.avp10.unwrap_or(0.0),
            val_ap10: validation.ap10.unwrap_or(0.0),
        };
        let qualifies = record.checkpoints.len() < cfg.top_k
            || record
                .checkpoints
                .last()
                .is_some_and(|worst| better(&entry, worst) == std::cmp::Ordering::Less);
        if qualifies {
            let meta = CheckpointMetadata {
                seed: cfg.seed,
                epoch,
                steps: adam.step_count(),
                val_ap: validation.ap10,
                val_avp: validation.avp10,
                fold: Some(cfg.fold),
            };
            // Write then rename, so a failed write never clobbers a kept checkpoint.
            let tmp = entry.path.with_extension("partial");
            Checkpoint::from_detector(det, meta).write(&tmp)?;
            std::fs::rename(&tmp, &entry.path).map_err(|e| Error::io(&entry.path, e))?;
            record.checkpoints.push(entry);
            record.checkpoints.sort_by(better);
            while record.checkpoints.len() > cfg.top_k {
                let evicted = record.checkpoints.pop().expect("non-empty");
                std::fs::remove_file(&evicted.path).map_err(|e| Error::io(&evicted.path, e))?;
            }
        }
    }
    Ok(())
}
