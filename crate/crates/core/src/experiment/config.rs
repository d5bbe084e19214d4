use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_pipeline::DEFAULT_FG_PROBABILITY;
use crate::detector::{DetectorConfig, GradingHead};
use crate::error::{Error, Result};
use crate::inference::EnsembleConfig;
use crate::nn::AdamConfig;

/// Everything a training run and its evaluation depend on.
///
/// Relative paths are resolved against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Cross-validation plan written by `split`; without one, the dataset's
    /// `trainval` list is split into train and `validation_scenes`, and its
    /// `test` list is held out.
    #[serde(default)]
    pub splits: Option<PathBuf>,
    #[serde(default = "default_validation_scenes")]
    pub validation_scenes: usize,
    #[serde(default)]
    pub fold: usize,
    pub variant: GradingHead,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Patch extent `(x, y, z)`.
    pub crop_shape: [usize; 3],
    #[serde(default = "default_fg")]
    pub fg_probability: f64,
    pub seed: u64,
    /// Checkpoints kept by validation AVP₁₀.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

fn default_validation_scenes() -> usize {
    100
}

fn default_fg() -> f64 {
    DEFAULT_FG_PROBABILITY
}

fn default_top_k() -> usize {
    4
}

impl ExperimentConfig {
    /// Reduced 2D toy profile: 128×128 scenes, 20 epochs of 50 batches of 16.
    pub fn desk(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, variant: GradingHead) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            splits: None,
            validation_scenes: 100,
            fold: 0,
            variant,
            epochs: 20,
            batches_per_epoch: 50,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
            crop_shape: [128, 128, 1],
            fg_probability: DEFAULT_FG_PROBABILITY,
            seed: 0,
            top_k: 4,
            detector: DetectorConfig::desk(variant),
            ensemble: EnsembleConfig::default(),
        }
    }

    /// Full toy schedule: 130 epochs of 200 batches at learning rate 1e-4,
    /// batch 20 in 2D and 8 in 3D, 320×320(×8) crops.
    pub fn paper(
        dataset: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
        variant: GradingHead,
        dimensionality: usize,
    ) -> Self {
        let three_d = dimensionality == 3;
        ExperimentConfig {
            epochs: 130,
            batches_per_epoch: 200,
            batch_size: if three_d { 8 } else { 20 },
            optimizer: AdamConfig::default(),
            crop_shape: if three_d { [320, 320, 8] } else { [320, 320, 1] },
            detector: DetectorConfig::full(dimensionality, variant),
            ..ExperimentConfig::desk(dataset, output_dir, variant)
        }
    }

    /// Detector configuration with this run's grading head.
    pub fn detector_config(&self) -> DetectorConfig {
        self.detector.with_head(self.variant)
    }

    pub fn with_variant(&self, variant: GradingHead) -> Self {
        ExperimentConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
            ("top_k", self.top_k),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.crop_shape.contains(&0) {
            return err(format!("crop shape {:?} has an empty axis", self.crop_shape));
        }
        if !(0.0..=1.0).contains(&self.fg_probability) {
            return err(format!(
                "fg_probability must lie in [0, 1], got {}",
                self.fg_probability
            ));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return err("learning rate must be > 0".into());
        }
        let det = self.detector_config();
        det.validate()?;
        let m = det.input_multiple();
        let planar = det.dimensionality == 2;
        for a in 0..3 {
            if planar && a == 2 {
                if self.crop_shape[2] != 1 {
                    return err("2D detectors need crop z = 1".into());
                }
                continue;
            }
            if self.crop_shape[a] % m[a] != 0 {
                return err(format!(
                    "crop shape {:?} must be a multiple of {m:?} along (x, y, z)",
                    self.crop_shape
                ));
            }
        }
        self.ensemble.cluster.validate()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
