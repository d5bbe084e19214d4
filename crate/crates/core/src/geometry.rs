//! Axis-aligned boxes in voxel coordinates, IoU, NMS and the box-delta coder.
//!
//! Coordinates are continuous: voxel `i` spans `[i, i + 1)` along its axis.
//! Axis order is always `(x, y, z)`; 2D boxes leave the z slot unused.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    ndim: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BBox {
    pub fn new_2d(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            ndim: 2,
            min: [x0, y0, 0.0],
            max: [x1, y1, 1.0],
        }
    }

    pub fn new_3d(min: [f64; 3], max: [f64; 3]) -> Self {
        BBox { ndim: 3, min, max }
    }

    pub fn from_slices(min: &[f64], max: &[f64]) -> Result<Self> {
        match (min.len(), max.len()) {
            (2, 2) => Ok(Self::new_2d(min[0], min[1], max[0], max[1])),
            (3, 3) => Ok(Self::new_3d([min[0], min[1], min[2]], [max[0], max[1], max[2]])),
            (a, b) => Err(Error::InvalidArgument(format!(
                "box corners must both have 2 or 3 coordinates, got {a} and {b}"
            ))),
        }
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn is_valid(&self) -> bool {
        (0..self.ndim).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn center(&self, axis: usize) -> f64 {
        0.5 * (self.min[axis] + self.max[axis])
    }

    /// Area in 2D, volume in 3D.
    pub fn volume(&self) -> f64 {
        (0..self.ndim).map(|a| self.extent(a).max(0.0)).product()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        (0..self.ndim.min(other.ndim))
            .map(|a| (self.max[a].min(other.max[a]) - self.min[a].max(other.min[a])).max(0.0))
            .product()
    }

    /// Drop to the in-plane part of a 3D box.
    pub fn to_2d(&self) -> BBox {
        BBox::new_2d(self.min[0], self.min[1], self.max[0], self.max[1])
    }

    /// Extend a 2D box along z.
    pub fn with_z(&self, z0: f64, z1: f64) -> BBox {
        BBox::new_3d([self.min[0], self.min[1], z0], [self.max[0], self.max[1], z1])
    }

    /// Clip to `[0, bounds[a]]` on every axis.
    pub fn clip(&self, bounds: [f64; 3]) -> BBox {
        let mut out = *self;
        for a in 0..self.ndim {
            out.min[a] = out.min[a].clamp(0.0, bounds[a]);
            out.max[a] = out.max[a].clamp(0.0, bounds[a]);
        }
        out
    }

    pub fn translate(&self, offset: [f64; 3]) -> BBox {
        let mut out = *self;
        for a in 0..self.ndim {
            out.min[a] += offset[a];
            out.max[a] += offset[a];
        }
        out
    }

    pub fn min_slice(&self) -> &[f64] {
        &self.min[..self.ndim]
    }

    pub fn max_slice(&self) -> &[f64] {
        &self.max[..self.ndim]
    }
}

/// Intersection over union; errors when the boxes disagree on dimensionality.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.ndim != b.ndim {
        return Err(Error::InvalidArgument(format!(
            "IoU between a {}D and a {}D box",
            a.ndim, b.ndim
        )));
    }
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Order indices by score descending, ties by index ascending.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order
}

/// Greedy non-maximum suppression. Returns kept indices in descending score order.
///
/// A box is suppressed when its IoU with an already kept box exceeds `iou_threshold`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    debug_assert_eq!(boxes.len(), scores.len());
    let order = rank_by_score(scores);
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| iou_unchecked(&boxes[k], &boxes[i]) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

/// Encodes boxes relative to reference boxes as center offsets and log-extents.
///
/// Deltas are laid out `(dx, dy[, dz], dw, dh[, dd])` and divided by `std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoder {
    pub center_std: f64,
    pub size_std: f64,
}

impl Default for BoxCoder {
    fn default() -> Self {
        BoxCoder {
            center_std: 0.1,
            size_std: 0.2,
        }
    }
}

/// Extents beyond e^this are clamped when decoding.
const MAX_LOG_SCALE: f64 = 4.135; // ln(1000 / 16)

impl BoxCoder {
    pub fn encode(&self, target: &BBox, reference: &BBox) -> Vec<f64> {
        let n = reference.ndim();
        let mut out = vec![0.0; 2 * n];
        for a in 0..n {
            let rw = reference.extent(a);
            out[a] = (target.center(a) - reference.center(a)) / rw / self.center_std;
            out[n + a] = (target.extent(a) / rw).ln() / self.size_std;
        }
        out
    }

    pub fn decode(&self, deltas: &[f64], reference: &BBox) -> BBox {
        let n = reference.ndim();
        let mut out = *reference;
        for a in 0..n {
            let rw = reference.extent(a);
            let c = reference.center(a) + deltas[a] * self.center_std * rw;
            let w = rw * (deltas[n + a] * self.size_std).min(MAX_LOG_SCALE).exp();
            out.min[a] = c - 0.5 * w;
            out.max[a] = c + 0.5 * w;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct BBoxRepr {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BBoxRepr {
            min: self.min_slice().to_vec(),
            max: self.max_slice().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = BBoxRepr::deserialize(d)?;
        BBox::from_slices(&r.min, &r.max).map_err(serde::de::Error::custom)
    }
}
