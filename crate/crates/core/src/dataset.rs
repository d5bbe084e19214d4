//! On-disk dataset layout shared by the toy generator and external multi-rater data.
//!
//! ```text
//! <dir>/manifest.json          dataset-level metadata, scene list, splits
//! <dir>/scenes/<id>.vol        intensity volume (see crate::volume)
//! <dir>/scenes/<id>.ann.jsonl  one RoIAnnotation per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::RoIAnnotation;
use crate::error::{Error, Result};
use crate::eval_metrics::BinningScheme;
use crate::toy_data::ToyConfig;
use crate::volume::Volume;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Toy,
    MultiRater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: DatasetKind,
    /// Bin centers in score units.
    pub binning: BinningScheme,
    /// Allowed range of individual rater scores, if bounded.
    #[serde(default)]
    pub score_range: Option<[f64; 2]>,
    pub rater_count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub toy_config: Option<ToyConfig>,
    pub scenes: Vec<String>,
    /// Named scene lists, e.g. `trainval` and `test`.
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<String>>,
}

/// One scene as the pipeline sees it: training scores live in
/// `rater_scores`, the evaluation ground truth in `exact_score`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub volume: Volume,
    pub annotations: Vec<RoIAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub scenes: Vec<SceneRecord>,
}

pub fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("scenes").join(format!("{id}.vol"))
}

pub fn annotation_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("scenes").join(format!("{id}.ann.jsonl"))
}

impl Dataset {
    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.iter().map(|s| s.id.clone()).collect()
    }

    pub fn split(&self, name: &str) -> Option<&[String]> {
        self.manifest.splits.get(name).map(|v| v.as_slice())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let scenes_dir = dir.join("scenes");
        fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;
        for scene in &self.scenes {
            scene.volume.write(&volume_path(dir, &scene.id))?;
            let path = annotation_path(dir, &scene.id);
            let mut buf = Vec::new();
            for a in &scene.annotations {
                serde_json::to_writer(&mut buf, a).expect("annotation serializes");
                buf.push(b'\n');
            }
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&buf).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Read and validate a dataset directory.
    pub fn read(dir: &Path) -> Result<Dataset> {
        let manifest = read_manifest(dir)?;
        let ids = manifest.scenes.clone();
        Dataset::read_scenes(dir, manifest, &ids)
    }

    /// Read the manifest and only the listed scenes; no other scene file is opened.
    pub fn read_subset(dir: &Path, ids: &[String]) -> Result<Dataset> {
        let manifest = read_manifest(dir)?;
        if let Some(bad) = ids.iter().find(|i| !manifest.scenes.contains(i)) {
            return Err(Error::Data(format!("scene {bad} is not part of {}", dir.display())));
        }
        Dataset::read_scenes(dir, manifest, ids)
    }

    fn read_scenes(dir: &Path, manifest: Manifest, ids: &[String]) -> Result<Dataset> {
        let scenes = ids
            .iter()
            .map(|id| read_scene(dir, &manifest, id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, scenes })
    }
}

/// Read and check `manifest.json`.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    if manifest.rater_count == 0 {
        return Err(Error::format(&mpath, "rater_count must be >= 1"));
    }
    for (name, ids) in &manifest.splits {
        if let Some(bad) = ids.iter().find(|i| !manifest.scenes.contains(i)) {
            return Err(Error::format(
                &mpath,
                format!("split {name} references unknown scene {bad}"),
            ));
        }
    }
    Ok(manifest)
}

fn read_scene(dir: &Path, manifest: &Manifest, id: &str) -> Result<SceneRecord> {
    let range = manifest.score_range.map(|[a, b]| (a, b));
    let volume = Volume::read(&volume_path(dir, id))?;
    if let Some(cfg) = &manifest.toy_config {
        if volume.dims() != cfg.volume_shape {
            return Err(Error::format(
                volume_path(dir, id),
                format!(
                    "volume shape {:?} differs from configured {:?}",
                    volume.dims(),
                    cfg.volume_shape
                ),
            ));
        }
    }
    let apath = annotation_path(dir, id);
    let text = fs::read_to_string(&apath).map_err(|e| Error::io(&apath, e))?;
    let mut annotations = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let a: RoIAnnotation =
            serde_json::from_str(line).map_err(|e| Error::format(&apath, format!("line {}: {e}", lineno + 1)))?;
        let ctx = format!("{}:{}", apath.display(), lineno + 1);
        a.validate(&ctx, &manifest.binning, range)?;
        if a.rater_scores.len() != manifest.rater_count {
            return Err(Error::validation(
                ctx,
                format!(
                    "mixed rater counts: {} scores, dataset declares {}",
                    a.rater_scores.len(),
                    manifest.rater_count
                ),
            ));
        }
        if a.bbox.ndim() != if volume.is_2d() { 2 } else { 3 } {
            return Err(Error::validation(ctx, "box dimensionality differs from the volume"));
        }
        annotations.push(a);
    }
    Ok(SceneRecord {
        id: id.to_string(),
        volume,
        annotations,
    })
}
