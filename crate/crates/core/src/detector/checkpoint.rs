use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DetectorConfig;
use super::model::Detector;
use crate::error::{Error, Result};
use crate::nn::NamedTensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub seed: u64,
    pub epoch: usize,
    pub steps: u64,
    /// Validation metrics the checkpoint was selected on, if any.
    #[serde(default)]
    pub val_ap: Option<f64>,
    #[serde(default)]
    pub val_avp: Option<f64>,
    #[serde(default)]
    pub fold: Option<usize>,
}

/// Versioned on-disk form of a [`Detector`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: DetectorConfig,
    pub params: Vec<NamedTensor>,
    pub metadata: CheckpointMetadata,
}

impl Checkpoint {
    pub fn from_detector(det: &Detector, metadata: CheckpointMetadata) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: det.config().clone(),
            params: det.params().export(),
            metadata,
        }
    }

    pub fn into_detector(self) -> Result<Detector> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut store = Detector::new(self.config.clone(), 0)?.params().clone();
        store.import(&self.params)?;
        Detector::from_parts(self.config, store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
