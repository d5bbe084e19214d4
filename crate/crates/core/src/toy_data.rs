//! Synthetic cylinder benchmark with ordinal label noise.
//!
//! Each scene holds non-overlapping cylinders of one of five canonical radii.
//! Training annotations carry a radius drawn from `Normal(r, r / noise_divisor)`;
//! the image itself shows a belt of reduced intensity of width `2σ` around the
//! true radius, so the ambiguity is visible to the model. Evaluation uses the
//! exact radii.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::{MaskRef, RoIAnnotation};
use crate::dataset::{Dataset, DatasetKind, Manifest, SceneRecord, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::eval_metrics::BinningScheme;
use crate::geometry::BBox;
use crate::rng::{stream, Rng, Stream};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: f64,
    pub belt: f64,
    pub core: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities {
            background: 0.0,
            belt: 0.5,
            core: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// `[nx, ny, nz]`; `nz = 1` gives 2D scenes.
    pub volume_shape: [usize; 3],
    pub canonical_radii: Vec<f64>,
    /// σ = r / noise_divisor.
    pub noise_divisor: f64,
    pub intensities: Intensities,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: [usize; 2],
    pub pixel_noise_std: f64,
    pub seed: u64,
    /// Free voxels kept between an object's belt and the volume border.
    pub margin: usize,
    /// Inclusive range of cylinder lengths along z.
    pub z_extent: [usize; 2],
    /// Rejection-sampling draws per object before the layout is restarted.
    pub max_placement_attempts: usize,
    /// Full layout restarts before generation fails.
    pub max_layout_restarts: usize,
}

impl Default for ToyConfig {
    /// Full-size 3D profile: 320×320×8 volumes.
    fn default() -> Self {
        ToyConfig {
            volume_shape: [320, 320, 8],
            canonical_radii: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            noise_divisor: 6.0,
            intensities: Intensities::default(),
            objects_per_scene: [1, 6],
            pixel_noise_std: 0.05,
            seed: 0,
            margin: 2,
            z_extent: [4, 8],
            max_placement_attempts: 200,
            max_layout_restarts: 50,
        }
    }
}

impl ToyConfig {
    /// Reduced 2D profile: 128×128 single-slice scenes.
    pub fn desk_2d() -> Self {
        ToyConfig {
            volume_shape: [128, 128, 1],
            objects_per_scene: [1, 3],
            z_extent: [1, 1],
            ..Default::default()
        }
    }

    pub fn is_2d(&self) -> bool {
        self.volume_shape[2] == 1
    }

    pub fn binning(&self) -> Result<BinningScheme> {
        BinningScheme::new(self.canonical_radii.clone())
    }

    pub fn sigma(&self, r: f64) -> f64 {
        r / self.noise_divisor
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.canonical_radii.len() != 5 {
            return err(format!(
                "expected 5 canonical radii, got {}",
                self.canonical_radii.len()
            ));
        }
        if self.canonical_radii[0] <= 0.0 || self.canonical_radii.windows(2).any(|w| w[0] >= w[1]) {
            return err(format!(
                "canonical radii must be positive and strictly increasing: {:?}",
                self.canonical_radii
            ));
        }
        let Intensities { background, belt, core } = self.intensities;
        if !(belt > background.min(core) && belt < background.max(core)) {
            return err(format!(
                "belt intensity {belt} must lie strictly between background {background} and core {core}"
            ));
        }
        if !(self.noise_divisor > 0.0) {
            return err(format!("noise divisor must be > 0, got {}", self.noise_divisor));
        }
        if self.volume_shape.contains(&0) {
            return err(format!("empty volume shape {:?}", self.volume_shape));
        }
        let [lo, hi] = self.objects_per_scene;
        if lo > hi {
            return err(format!("objects_per_scene range [{lo}, {hi}] is empty"));
        }
        let [zlo, zhi] = self.z_extent;
        if zlo == 0 || zlo > zhi || zhi > self.volume_shape[2] {
            return err(format!(
                "z extent [{zlo}, {zhi}] must lie in [1, {}]",
                self.volume_shape[2]
            ));
        }
        if self.pixel_noise_std < 0.0 {
            return err("pixel noise std must be >= 0".into());
        }
        Ok(())
    }
}

/// One placed cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    /// Axis position `(x, y)` and z center, in continuous voxel coordinates.
    pub center: [f64; 3],
    pub exact_radius: f64,
    pub annotated_radius: f64,
    pub category: u32,
    pub annotated_category: u32,
    /// Length along z in voxels, starting at slice `z_min`.
    pub axis_extent: usize,
    pub z_min: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub volume: Volume,
    /// Exact ground truth, used for evaluation.
    pub annotations: Vec<RoIAnnotation>,
    /// Noisy ground truth, used for training.
    pub noisy_annotations: Vec<RoIAnnotation>,
    pub cylinders: Vec<CylinderSpec>,
}

pub fn scene_id(index: usize) -> String {
    format!("toy_{index:05}")
}

/// Draw an annotated radius from `Normal(r, r / noise_divisor)`, redrawing
/// until it exceeds half a voxel.
pub fn sample_noisy_radius(r: f64, noise_divisor: f64, rng: &mut Rng) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be > 0, got {r}")));
    }
    let dist =
        Normal::new(r, r / noise_divisor).map_err(|e| Error::InvalidArgument(format!("noise model for r={r}: {e}")))?;
    for _ in 0..10_000 {
        let v = dist.sample(rng);
        if v > 0.5 {
            return Ok(v);
        }
    }
    Err(Error::Numeric(format!("no positive radius draw for r={r}")))
}

/// Intensity field and mask of one cylinder over its bounding block.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderRaster {
    pub origin: [usize; 3],
    pub dims: [usize; 3],
    /// `None` where the voxel is background.
    pub intensity: Vec<Option<f32>>,
    pub mask: Vec<bool>,
}

impl CylinderRaster {
    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Tight bounding box of the mask in volume coordinates.
    pub fn mask_box(&self, planar: bool) -> Option<BBox> {
        let [nx, ny, _] = self.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for (i, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] + self.origin[a]);
                hi[a] = hi[a].max(p[a] + self.origin[a] + 1);
            }
        }
        if lo[0] == usize::MAX {
            return None;
        }
        let min = lo.map(|v| v as f64);
        let max = hi.map(|v| v as f64);
        Some(if planar {
            BBox::new_2d(min[0], min[1], max[0], max[1])
        } else {
            BBox::new_3d(min, max)
        })
    }
}

/// Rasterize a cylinder: core intensity for in-plane distance `d <= r - σ`,
/// belt for `r - σ < d <= r + σ`, background beyond; mask is `d <= r`.
/// Distances are measured from voxel centers; only slices in the
/// cylinder's z range are touched.
pub fn rasterize_cylinder(spec: &CylinderSpec, config: &ToyConfig, scene: &str) -> Result<CylinderRaster> {
    let r = spec.exact_radius;
    let sigma = config.sigma(r);
    let reach = if sigma.is_finite() { r + sigma } else { r };
    let [nx, ny, nz] = config.volume_shape;
    let (cx, cy) = (spec.center[0], spec.center[1]);
    let x0 = (cx - reach).floor();
    let y0 = (cy - reach).floor();
    let x1 = (cx + reach).ceil();
    let y1 = (cy + reach).ceil();
    if x0 < 0.0
        || y0 < 0.0
        || x1 > nx as f64
        || y1 > ny as f64
        || spec.z_min + spec.axis_extent > nz
        || spec.axis_extent == 0
    {
        return Err(Error::Generation {
            scene: scene.to_string(),
            message: format!(
                "cylinder at {:?} with radius {r} does not fit volume {:?}",
                spec.center, config.volume_shape
            ),
        });
    }
    let origin = [x0 as usize, y0 as usize, spec.z_min];
    let dims = [(x1 - x0) as usize, (y1 - y0) as usize, spec.axis_extent];
    let n = dims.iter().product();
    let mut intensity = vec![None; n];
    let mut mask = vec![false; n];
    let levels = config.intensities;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let px = (origin[0] + x) as f64 + 0.5;
                let py = (origin[1] + y) as f64 + 0.5;
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let i = (z * dims[1] + y) * dims[0] + x;
                intensity[i] = if d <= r - sigma {
                    Some(levels.core as f32)
                } else if d <= r + sigma {
                    Some(levels.belt as f32)
                } else {
                    None
                };
                mask[i] = d <= r;
            }
        }
    }
    Ok(CylinderRaster {
        origin,
        dims,
        intensity,
        mask,
    })
}

/// Generate scene `index` from the streams derived from `config.seed`.
pub fn generate_scene(config: &ToyConfig, index: usize) -> Result<Scene> {
    let i = index as u64;
    generate_scene_with_streams(
        config,
        index,
        &mut stream(config.seed, Stream::Geometry, &[i]),
        &mut stream(config.seed, Stream::LabelNoise, &[i]),
        &mut stream(config.seed, Stream::PixelNoise, &[i]),
    )
}

type Placement = (usize, f64, f64, usize, usize);

/// Draw the object count, categories and positions. Footprints (belt plus
/// label-noise reach) never overlap; a layout that gets stuck is redrawn.
fn plan_layout(config: &ToyConfig, id: &str, geometry: &mut Rng) -> Result<Vec<Placement>> {
    let [nx, ny, nz] = config.volume_shape;
    let mut last_failure = String::new();
    'layout: for _ in 0..=config.max_layout_restarts {
        let count = geometry.random_range(config.objects_per_scene[0]..=config.objects_per_scene[1]);
        let mut occupied: Vec<BBox> = Vec::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let cat = geometry.random_range(0..config.canonical_radii.len());
            let r = config.canonical_radii[cat];
            let sigma = config.sigma(r);
            let reach = if sigma.is_finite() { r + sigma } else { r };
            let lo = config.margin as f64 + reach;
            let (hx, hy) = (nx as f64 - lo, ny as f64 - lo);
            if hx < lo || hy < lo {
                return Err(Error::Generation {
                    scene: id.to_string(),
                    message: format!(
                        "radius {r} does not fit a {nx}x{ny} plane with margin {}",
                        config.margin
                    ),
                });
            }
            let mut placed = false;
            for _ in 0..config.max_placement_attempts {
                let extent = geometry.random_range(config.z_extent[0]..=config.z_extent[1]);
                let z_min = geometry.random_range(0..=nz - extent);
                let cx = geometry.random_range(lo..=hx);
                let cy = geometry.random_range(lo..=hy);
                let footprint = BBox::new_3d(
                    [cx - reach, cy - reach, z_min as f64],
                    [cx + reach, cy + reach, (z_min + extent) as f64],
                );
                if occupied.iter().all(|o| o.intersection(&footprint) <= 0.0) {
                    occupied.push(footprint);
                    out.push((cat, cx, cy, z_min, extent));
                    placed = true;
                    break;
                }
            }
            if !placed {
                last_failure = format!(
                    "could not place object {k} (radius {r}) after {} attempts",
                    config.max_placement_attempts
                );
                continue 'layout;
            }
        }
        return Ok(out);
    }
    Err(Error::Generation {
        scene: id.to_string(),
        message: format!("{last_failure}, in each of {} layouts", config.max_layout_restarts + 1),
    })
}

/// Scene generation with explicit streams: geometry (placement, categories),
/// label noise (annotated radii) and pixel noise are independent.
pub fn generate_scene_with_streams(
    config: &ToyConfig,
    index: usize,
    geometry: &mut Rng,
    label_noise: &mut Rng,
    pixel_noise: &mut Rng,
) -> Result<Scene> {
    config.validate()?;
    let id = scene_id(index);
    let scheme = config.binning()?;
    let planar = config.is_2d();
    let layout = plan_layout(config, &id, geometry)?;

    let mut volume = Volume::filled(config.volume_shape, config.intensities.background as f32);
    let count = layout.len();
    let mut cylinders = Vec::with_capacity(count);
    let mut exact = Vec::with_capacity(count);
    let mut noisy = Vec::with_capacity(count);

    for (k, &(cat, cx, cy, z_min, extent)) in layout.iter().enumerate() {
        let r = config.canonical_radii[cat];
        let r_a = sample_noisy_radius(r, config.noise_divisor, label_noise)?;
        let spec = CylinderSpec {
            center: [cx, cy, z_min as f64 + extent as f64 / 2.0],
            exact_radius: r,
            annotated_radius: r_a,
            category: scheme.category(r)?,
            annotated_category: scheme.category(r_a)?,
            axis_extent: extent,
            z_min,
        };
        let raster = rasterize_cylinder(&spec, config, &id)?;
        composite_max(&mut volume, &raster);
        let bbox = raster.mask_box(planar).ok_or_else(|| Error::Generation {
            scene: id.clone(),
            message: format!("object {k} rasterizes to an empty mask"),
        })?;
        let mask = MaskRef::Cylinder {
            cx,
            cy,
            radius: r,
            z_min,
            z_max: z_min + extent,
        };
        exact.push(RoIAnnotation {
            id: k as u32,
            bbox,
            rater_scores: vec![r],
            exact_score: r,
            category: spec.category,
            mask: Some(mask.clone()),
        });
        noisy.push(RoIAnnotation {
            id: k as u32,
            bbox,
            rater_scores: vec![r_a],
            exact_score: r_a,
            category: spec.annotated_category,
            mask: Some(mask),
        });
        cylinders.push(spec);
    }

    if config.pixel_noise_std > 0.0 {
        let dist = Normal::new(0.0, config.pixel_noise_std).map_err(|e| Error::Config(format!("pixel noise: {e}")))?;
        for v in volume.data_mut() {
            *v += dist.sample(pixel_noise) as f32;
        }
    }

    Ok(Scene {
        scene_id: id,
        volume,
        annotations: exact,
        noisy_annotations: noisy,
        cylinders,
    })
}

fn composite_max(volume: &mut Volume, raster: &CylinderRaster) {
    let [dx, dy, dz] = raster.dims;
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                if let Some(v) = raster.intensity[(z * dy + y) * dx + x] {
                    let (vx, vy, vz) = (raster.origin[0] + x, raster.origin[1] + y, raster.origin[2] + z);
                    let cur = volume.get(vx, vy, vz);
                    volume.set(vx, vy, vz, cur.max(v));
                }
            }
        }
    }
}

/// Generate scenes `start..start + count`.
pub fn generate_scenes(config: &ToyConfig, start: usize, count: usize) -> Result<Vec<Scene>> {
    (start..start + count).map(|i| generate_scene(config, i)).collect()
}

impl Scene {
    /// Pipeline view: noisy radius as the single rater score, exact radius as ground truth.
    pub fn to_record(&self) -> SceneRecord {
        let annotations = self
            .annotations
            .iter()
            .zip(&self.noisy_annotations)
            .map(|(e, n)| RoIAnnotation {
                rater_scores: n.rater_scores.clone(),
                ..e.clone()
            })
            .collect();
        SceneRecord {
            id: self.scene_id.clone(),
            volume: self.volume.clone(),
            annotations,
        }
    }

    fn from_record(rec: &SceneRecord, scheme: &BinningScheme) -> Result<Scene> {
        let mut exact = Vec::new();
        let mut noisy = Vec::new();
        let mut cylinders = Vec::new();
        for a in &rec.annotations {
            let r_a = a.rater_scores[0];
            exact.push(RoIAnnotation {
                rater_scores: vec![a.exact_score],
                ..a.clone()
            });
            let annotated_category = scheme.category(r_a)?;
            noisy.push(RoIAnnotation {
                exact_score: r_a,
                category: annotated_category,
                ..a.clone()
            });
            if let Some(MaskRef::Cylinder {
                cx,
                cy,
                radius,
                z_min,
                z_max,
            }) = a.mask
            {
                cylinders.push(CylinderSpec {
                    center: [cx, cy, (z_min + z_max) as f64 / 2.0],
                    exact_radius: radius,
                    annotated_radius: r_a,
                    category: a.category,
                    annotated_category,
                    axis_extent: z_max - z_min,
                    z_min,
                });
            }
        }
        Ok(Scene {
            scene_id: rec.id.clone(),
            volume: rec.volume.clone(),
            annotations: exact,
            noisy_annotations: noisy,
            cylinders,
        })
    }
}

/// In-memory dataset of toy scenes. `splits` names scene-id lists such as
/// `trainval` and `test`.
pub fn to_dataset(scenes: &[Scene], config: &ToyConfig, splits: BTreeMap<String, Vec<String>>) -> Result<Dataset> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: DatasetKind::Toy,
        binning: config.binning()?,
        score_range: None,
        rater_count: 1,
        seed: Some(config.seed),
        toy_config: Some(config.clone()),
        scenes: scenes.iter().map(|s| s.scene_id.clone()).collect(),
        splits,
    };
    Ok(Dataset {
        manifest,
        scenes: scenes.iter().map(Scene::to_record).collect(),
    })
}

/// Persist scenes with their config.
pub fn write_dataset(
    scenes: &[Scene],
    config: &ToyConfig,
    splits: BTreeMap<String, Vec<String>>,
    dir: &Path,
) -> Result<()> {
    to_dataset(scenes, config, splits)?.write(dir)
}

/// Read a toy dataset back: config, scenes and splits.
pub fn read_dataset(dir: &Path) -> Result<(ToyConfig, Vec<Scene>, BTreeMap<String, Vec<String>>)> {
    let ds = Dataset::read(dir)?;
    let config = ds.manifest.toy_config.clone().ok_or_else(|| {
        Error::format(
            dir.join(crate::dataset::MANIFEST_FILE),
            "not a toy dataset (no toy_config)",
        )
    })?;
    let scheme = ds.manifest.binning.clone();
    let scenes = ds
        .scenes
        .iter()
        .map(|r| Scene::from_record(r, &scheme))
        .collect::<Result<Vec<_>>>()?;
    Ok((config, scenes, ds.manifest.splits))
}

/// Generate `n_trainval + n_test` scenes and write them with `trainval`/`test` splits.
pub fn generate_dataset(config: &ToyConfig, n_trainval: usize, n_test: usize, dir: &Path) -> Result<()> {
    let scenes = generate_scenes(config, 0, n_trainval + n_test)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.scene_id.clone()).collect();
    let mut splits = BTreeMap::new();
    splits.insert("trainval".to_string(), ids[..n_trainval].to_vec());
    splits.insert("test".to_string(), ids[n_trainval..].to_vec());
    write_dataset(&scenes, config, splits, dir)
}
