//! Dataset ingestion, cross-validation splits, patch sampling and per-iteration
//! training targets.
//!
//! Training targets are re-drawn every time an object is seen: one rater score
//! is picked uniformly from the object's `rater_scores`. Evaluation instead
//! uses `exact_score` (the rater mean for multi-rater data, the exact radius
//! for the toy benchmark).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::MaskRef;
pub use crate::annotation::RoIAnnotation;
use crate::dataset::{Dataset, DatasetKind, SceneRecord};
use crate::error::{Error, Result};
use crate::eval_metrics::BinningScheme;
use crate::geometry::BBox;
use crate::rng::{stream, Rng, Stream};
use crate::volume::Volume;

pub const DEFAULT_FG_PROBABILITY: f64 = 0.5;

/// Scene ids for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_count: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// K-fold plan: scenes are shuffled into `folds` near-equal chunks; fold `k`
/// tests on chunk `k`, validates on chunk `k + 1` and trains on the rest
/// (60/20/20 for five folds).
pub fn make_cv_splits(scene_ids: &[String], folds: usize, seed: u64) -> Result<SplitPlan> {
    if folds < 3 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 3 folds for train/val/test, got {folds}"
        )));
    }
    if scene_ids.len() < folds {
        return Err(Error::Config(format!(
            "{} scenes cannot fill {folds} folds",
            scene_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = scene_ids.iter().collect();
    if unique.len() != scene_ids.len() {
        return Err(Error::Config("duplicate scene ids in split input".into()));
    }
    let mut ids = scene_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut stream(seed, Stream::Splits, &[folds as u64]));
    let n = ids.len();
    let chunks: Vec<Vec<String>> = (0..folds)
        .map(|k| ids[k * n / folds..(k + 1) * n / folds].to_vec())
        .collect();
    let folds_v = (0..folds)
        .map(|k| {
            let v = (k + 1) % folds;
            let train = (0..folds)
                .filter(|&j| j != k && j != v)
                .flat_map(|j| chunks[j].iter().cloned())
                .collect();
            Fold {
                train,
                val: chunks[v].clone(),
                test: chunks[k].clone(),
            }
        })
        .collect();
    Ok(SplitPlan {
        fold_count: folds,
        seed,
        folds: folds_v,
    })
}

impl SplitPlan {
    /// Single fold: a shuffled `trainval` pool split into train and `n_val`
    /// validation scenes, plus a fixed test list.
    pub fn holdout(trainval: &[String], test: &[String], n_val: usize, seed: u64) -> Result<SplitPlan> {
        if n_val >= trainval.len() {
            return Err(Error::Config(format!(
                "{n_val} validation scenes leave no training data out of {}",
                trainval.len()
            )));
        }
        let mut ids = trainval.to_vec();
        ids.sort();
        ids.shuffle(&mut stream(seed, Stream::Splits, &[u64::MAX]));
        let val = ids.split_off(ids.len() - n_val);
        Ok(SplitPlan {
            fold_count: 1,
            seed,
            folds: vec![Fold {
                train: ids,
                val,
                test: test.to_vec(),
            }],
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("split plan serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<SplitPlan> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// A training score and its zero-based bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingTarget {
    pub score: f64,
    pub bin: usize,
}

/// Pick one rater score uniformly at random.
pub fn sample_training_target(ann: &RoIAnnotation, scheme: &BinningScheme, rng: &mut Rng) -> Result<TrainingTarget> {
    let score = match ann.rater_scores.len() {
        0 => return Err(Error::Data(format!("annotation {} has no rater scores", ann.id))),
        1 => ann.rater_scores[0],
        n => ann.rater_scores[rng.random_range(0..n)],
    };
    Ok(TrainingTarget {
        score,
        bin: scheme.bin(score)?,
    })
}

/// A crop with the annotations that survive it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub patch: Volume,
    /// Boxes and masks in patch coordinates.
    pub annotations: Vec<RoIAnnotation>,
    /// Index into the scene's annotation list for each retained annotation.
    pub source: Vec<usize>,
    pub scene_id: String,
    pub origin: [usize; 3],
}

/// Fraction of an annotation's box that must lie inside a crop to keep it.
pub const MIN_VISIBLE_FRACTION: f64 = 0.5;

/// Crop `crop_shape` voxels from a scene, centered (with jitter) on a random
/// object with probability `fg_probability`, uniformly otherwise.
pub fn sample_patch(
    scene: &SceneRecord,
    crop_shape: [usize; 3],
    fg_probability: f64,
    rng: &mut Rng,
) -> Result<PatchSample> {
    let dims = scene.volume.dims();
    if (0..3).any(|a| crop_shape[a] > dims[a] || crop_shape[a] == 0) {
        return Err(Error::Config(format!(
            "crop {crop_shape:?} does not fit volume {dims:?} of scene {}",
            scene.id
        )));
    }
    let foreground = !scene.annotations.is_empty() && rng.random::<f64>() < fg_probability;
    let mut origin = [0usize; 3];
    if foreground {
        let ann = &scene.annotations[rng.random_range(0..scene.annotations.len())];
        for a in 0..3 {
            let slack = dims[a] - crop_shape[a];
            if slack == 0 {
                continue;
            }
            let c = if a < ann.bbox.ndim() {
                ann.bbox.center(a)
            } else {
                dims[a] as f64 / 2.0
            };
            let j = crop_shape[a] as f64 / 4.0;
            let jitter = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            let o = (c + jitter - crop_shape[a] as f64 / 2.0).round();
            origin[a] = o.clamp(0.0, slack as f64) as usize;
        }
    } else {
        for a in 0..3 {
            origin[a] = rng.random_range(0..=dims[a] - crop_shape[a]);
        }
    }
    let patch = scene.volume.crop(origin, crop_shape)?;
    let planar = scene.volume.is_2d();
    let crop_box = if planar {
        BBox::new_2d(
            origin[0] as f64,
            origin[1] as f64,
            (origin[0] + crop_shape[0]) as f64,
            (origin[1] + crop_shape[1]) as f64,
        )
    } else {
        BBox::new_3d(
            origin.map(|v| v as f64),
            [0, 1, 2].map(|a| (origin[a] + crop_shape[a]) as f64),
        )
    };
    let shift = origin.map(|v| -(v as f64));
    let mut annotations = Vec::new();
    let mut source = Vec::new();
    for (i, a) in scene.annotations.iter().enumerate() {
        let vol = a.bbox.volume();
        if vol <= 0.0 || a.bbox.intersection(&crop_box) / vol < MIN_VISIBLE_FRACTION {
            continue;
        }
        let mut bounds = [0.0; 3];
        for ax in 0..3 {
            bounds[ax] = crop_shape[ax] as f64;
        }
        let mut kept = a.clone();
        kept.bbox = a.bbox.translate(shift).clip(bounds);
        kept.mask = a.mask.as_ref().map(|m| match *m {
            MaskRef::Cylinder {
                cx,
                cy,
                radius,
                z_min,
                z_max,
            } => MaskRef::Cylinder {
                cx: cx - origin[0] as f64,
                cy: cy - origin[1] as f64,
                radius,
                z_min: z_min.saturating_sub(origin[2]),
                z_max: z_max.saturating_sub(origin[2]),
            },
        });
        annotations.push(kept);
        source.push(i);
    }
    Ok(PatchSample {
        patch,
        annotations,
        source,
        scene_id: scene.id.clone(),
        origin,
    })
}

/// Load a preprocessed multi-rater dataset in the shared on-disk format.
pub fn ingest_external(dir: &Path) -> Result<Dataset> {
    let ds = Dataset::read(dir)?;
    if ds.manifest.kind != DatasetKind::MultiRater {
        return Err(Error::Data(format!(
            "{} is a {:?} dataset, expected multi_rater",
            dir.display(),
            ds.manifest.kind
        )));
    }
    Ok(ds)
}

/// One object as the training loop sees it in a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainObject {
    pub bbox: BBox,
    pub target: TrainingTarget,
    pub annotation: RoIAnnotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub scene_id: String,
    pub origin: [usize; 3],
    pub patch: Volume,
    pub objects: Vec<TrainObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<TrainingSample>,
}

impl Batch {
    /// SHA-256 over patch bytes, boxes and sampled targets.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.scene_id.as_bytes());
            for v in s.patch.data() {
                h.update(v.to_le_bytes());
            }
            for o in &s.objects {
                for v in o.bbox.min_slice().iter().chain(o.bbox.max_slice()) {
                    h.update(v.to_le_bytes());
                }
                h.update(o.target.score.to_le_bytes());
                h.update((o.target.bin as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Deterministic batch assembly: batch `(epoch, index)` depends only on the
/// seed, never on the model or on previously drawn batches.
pub struct BatchSampler<'a> {
    pub dataset: &'a Dataset,
    pub train_ids: Vec<String>,
    pub crop_shape: [usize; 3],
    pub fg_probability: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSampler<'_> {
    pub fn batch(&self, epoch: usize, index: usize) -> Result<Batch> {
        if self.train_ids.is_empty() {
            return Err(Error::Config("no training scenes".into()));
        }
        let mut rng = stream(self.seed, Stream::Patches, &[epoch as u64, index as u64]);
        let mut samples = Vec::with_capacity(self.batch_size);
        for item in 0..self.batch_size {
            let id = &self.train_ids[rng.random_range(0..self.train_ids.len())];
            let scene = self
                .dataset
                .scene(id)
                .ok_or_else(|| Error::Data(format!("training scene {id} missing from dataset")))?;
            let patch = sample_patch(scene, self.crop_shape, self.fg_probability, &mut rng)?;
            let mut target_rng = stream(
                self.seed,
                Stream::RaterSampling,
                &[epoch as u64, index as u64, item as u64],
            );
            let objects = patch
                .annotations
                .iter()
                .map(|a| {
                    Ok(TrainObject {
                        bbox: a.bbox,
                        target: sample_training_target(a, &self.dataset.manifest.binning, &mut target_rng)?,
                        annotation: a.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(TrainingSample {
                scene_id: patch.scene_id,
                origin: patch.origin,
                patch: patch.patch,
                objects,
            });
        }
        Ok(Batch { samples })
    }
}
