//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use num_rational::Ratio;
use rand::Rng as _;

use grading_detector::detector::{Detection, Grading};
use grading_detector::eval_metrics::{BinningScheme, GtObject};
use grading_detector::geometry::{iou, BBox};
use grading_detector::inference::SourcedDetection;
use grading_detector::rng::Rng;

pub type Q = Ratio<i64>;

/// Axis-aligned integer rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn bbox(&self) -> BBox {
        BBox::new_2d(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64)
    }

    fn cells(&self) -> Vec<(i64, i64)> {
        let mut v = Vec::new();
        for x in self.x0..self.x1 {
            for y in self.y0..self.y1 {
                v.push((x, y));
            }
        }
        v
    }
}

/// IoU by counting unit cells.
pub fn iou_by_cells(a: &Rect, b: &Rect) -> Q {
    let ca = a.cells();
    let cb = b.cells();
    let inter = ca.iter().filter(|c| cb.contains(c)).count() as i64;
    let union = (ca.len() + cb.len()) as i64 - inter;
    Q::new(inter, union)
}

/// One detection of a small evaluation instance.
#[derive(Debug, Clone, Copy)]
pub struct OracleDet {
    pub rect: Rect,
    pub confidence: i64,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleGt {
    pub rect: Rect,
    pub bin: usize,
}

/// Per-detection flags `(detection_tp, graded_tp)` in input order.
///
/// Detections are processed by repeatedly taking the highest remaining
/// confidence (earliest on ties); each claims the free GT of highest IoU
/// (earliest on ties) among those with IoU strictly above 1/10.
pub fn oracle_match(dets: &[OracleDet], gts: &[OracleGt]) -> Vec<(bool, bool)> {
    let mut flags = vec![(false, false); dets.len()];
    let mut done = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    for _ in 0..dets.len() {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if done[i] {
                continue;
            }
            if pick.is_none_or(|p| dets[i].confidence > dets[p].confidence) {
                pick = Some(i);
            }
        }
        let i = pick.expect("one detection left");
        done[i] = true;
        let mut best: Option<(Q, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou_by_cells(&dets[i].rect, &gt.rect);
            if v > Q::new(1, 10) && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, g));
            }
        }
        if let Some((_, g)) = best {
            taken[g] = true;
            flags[i] = (true, gts[g].bin == dets[i].bin);
        }
    }
    flags
}

/// All-point AP in exact arithmetic: for every cutoff of the ranking compute
/// (recall, precision); the area sums, over each recall increment, the best
/// precision reached at that recall or beyond.
pub fn oracle_ap(ranked_tp: &[bool], n_gt: usize) -> Option<Q> {
    if n_gt == 0 {
        return None;
    }
    let n = n_gt as i64;
    let mut points: Vec<(Q, Q)> = Vec::new();
    let mut tp = 0i64;
    for (k, &t) in ranked_tp.iter().enumerate() {
        if t {
            tp += 1;
        }
        points.push((Q::new(tp, n), Q::new(tp, k as i64 + 1)));
    }
    let mut area = Q::from_integer(0);
    let mut prev = Q::from_integer(0);
    let mut levels: Vec<Q> = points.iter().map(|p| p.0).collect();
    levels.dedup();
    for r in levels {
        if r == prev {
            continue;
        }
        let best = points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .max()
            .unwrap_or_else(|| Q::from_integer(0));
        area += (r - prev) * best;
        prev = r;
    }
    Some(area)
}

/// Ranking used by the oracle: confidence descending, index ascending.
pub fn oracle_rank(confidences: &[i64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    // Insertion sort keeps equal confidences in input order.
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && confidences[idx[j - 1]] < confidences[idx[j]] {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx
}

pub fn q_to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Toy binning with centers 4..20.
pub fn toy_scheme() -> BinningScheme {
    BinningScheme::new(vec![4.0, 8.0, 12.0, 16.0, 20.0]).unwrap()
}

pub fn det(bbox: BBox, objectness: f64, score: f64) -> Detection {
    Detection {
        bbox,
        objectness,
        grading: Grading::Score(score),
    }
}

pub fn gt(bbox: BBox, score: f64) -> GtObject {
    GtObject { bbox, score }
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `||a - b|| / max(||a||, ||b||)` over vectors.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// A random instance with ≤5 detections and ≤3 GTs on a 12x12 integer grid.
pub fn random_instance(rng: &mut Rng) -> (Vec<OracleDet>, Vec<OracleGt>) {
    let rect = |rng: &mut Rng| {
        let x0 = rng.random_range(0..8);
        let y0 = rng.random_range(0..8);
        Rect {
            x0,
            y0,
            x1: x0 + rng.random_range(1..5),
            y1: y0 + rng.random_range(1..5),
        }
    };
    let n_gt = rng.random_range(1..=3);
    let gts: Vec<OracleGt> = (0..n_gt)
        .map(|_| OracleGt {
            rect: rect(rng),
            bin: rng.random_range(0..5),
        })
        .collect();
    let n_det = rng.random_range(0..=5);
    let dets = (0..n_det)
        .map(|_| {
            // Half of the detections sit on a GT to make matches likely.
            let r = if rng.random_bool(0.5) {
                let g = gts[rng.random_range(0..gts.len())].rect;
                Rect {
                    x0: g.x0,
                    y0: g.y0,
                    x1: g.x1 + rng.random_range(0..2),
                    y1: g.y1,
                }
            } else {
                rect(rng)
            };
            OracleDet {
                rect: r,
                confidence: rng.random_range(0..4),
                bin: rng.random_range(0..5),
            }
        })
        .collect();
    (dets, gts)
}

pub fn to_library(dets: &[OracleDet], gts: &[OracleGt]) -> (Vec<Detection>, Vec<GtObject>) {
    let s = toy_scheme();
    (
        dets.iter()
            .map(|d| det(d.rect.bbox(), d.confidence as f64 / 4.0, s.centers()[d.bin]))
            .collect(),
        gts.iter().map(|g| gt(g.rect.bbox(), s.centers()[g.bin])).collect(),
    )
}

/// Clusters as index lists, seeds picked by repeated scans for the strongest
/// remaining detection.
pub fn oracle_clusters(dets: &[SourcedDetection], thr: f64) -> Vec<Vec<usize>> {
    let mut free: Vec<bool> = vec![true; dets.len()];
    let stronger = |a: &SourcedDetection, ia: usize, b: &SourcedDetection, ib: usize| {
        (-a.detection.objectness, a.member, a.view, ia) < (-b.detection.objectness, b.member, b.view, ib)
    };
    let mut out = Vec::new();
    while let Some(seed) = (0..dets.len()).filter(|&i| free[i]).reduce(|best, i| {
        if stronger(&dets[i], i, &dets[best], best) {
            i
        } else {
            best
        }
    }) {
        let members: Vec<usize> = (0..dets.len())
            .filter(|&j| {
                free[j] && (j == seed || iou(&dets[seed].detection.bbox, &dets[j].detection.bbox).unwrap() > thr)
            })
            .collect();
        for &j in &members {
            free[j] = false;
        }
        out.push(members);
    }
    out
}
