//! JSON-lines files of detections and ground truth keyed by scene, so
//! detections from any source can be scored.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matching::GtObject;
use crate::detector::{Detection, Grading};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    pub grading: Grading,
}

impl DetectionRecord {
    pub fn new(scene_id: &str, d: &Detection) -> Self {
        DetectionRecord {
            scene_id: scene_id.to_string(),
            bbox: d.bbox,
            confidence: d.objectness,
            grading: d.grading.clone(),
        }
    }

    pub fn detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            objectness: self.confidence,
            grading: self.grading.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub scene_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Read one record per non-blank line; errors name the line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Group detections and ground truth by scene. Scenes present in either
/// file are evaluated; a scene without GT contributes only false positives.
pub fn pair_by_scene(dets: &[DetectionRecord], gts: &[GtRecord]) -> Vec<(String, Vec<Detection>, Vec<GtObject>)> {
    let mut map: BTreeMap<String, (Vec<Detection>, Vec<GtObject>)> = BTreeMap::new();
    for d in dets {
        map.entry(d.scene_id.clone()).or_default().0.push(d.detection());
    }
    for g in gts {
        map.entry(g.scene_id.clone()).or_default().1.push(GtObject {
            bbox: g.bbox,
            score: g.score,
        });
    }
    map.into_iter().map(|(k, (d, g))| (k, d, g)).collect()
}
