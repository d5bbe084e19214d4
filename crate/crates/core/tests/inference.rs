mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng as _;

use common::{det, oracle_clusters};
use grading_detector::detector::{Detection, Detector, DetectorConfig, Grading, GradingHead};
use grading_detector::geometry::{iou, BBox};
use grading_detector::inference::*;
use grading_detector::rng::{stream, Stream};
use grading_detector::volume::Volume;

fn sourced(d: Detection, member: usize, view: usize) -> SourcedDetection {
    SourcedDetection {
        detection: d,
        member,
        view,
    }
}

fn score(d: &Detection) -> f64 {
    match d.grading {
        Grading::Score(s) => s,
        Grading::Probabilities(_) => panic!("expected a score"),
    }
}

fn noise(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = stream(seed, Stream::PixelNoise, &[]);
    let n = dims.iter().product();
    Volume::from_data(dims, (0..n).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap()
}

#[test]
fn views_round_trip_boxes_and_volumes() {
    let dims = [64, 48, 1];
    let views = mirror_views(dims);
    assert_eq!(views.len(), 4);
    assert!(views[0].is_identity());
    let b = BBox::new_2d(3.25, 7.5, 20.0, 41.0);
    let v = noise(dims, 1);
    for view in &views {
        let back = view.inverse_box(&view.forward_box(&b));
        for a in 0..2 {
            assert_abs_diff_eq!(back.min[a], b.min[a], epsilon = 1e-5);
            assert_abs_diff_eq!(back.max[a], b.max[a], epsilon = 1e-5);
        }
        assert_eq!(view.apply(&view.apply(&v)), v);
    }
    // Mirroring x moves the box to the other side of the plane.
    assert_eq!(views[1].forward_box(&b), BBox::new_2d(44.0, 7.5, 60.75, 41.0));
    let v3 = mirror_views([32, 32, 8]);
    assert!(v3.iter().all(|t| !t.mirror[2]));
}

#[test]
fn mirrored_pixels_land_where_mirrored_boxes_say() {
    let dims = [16, 12, 1];
    let mut v = Volume::zeros(dims);
    v.set(2, 3, 0, 1.0);
    let pixel = BBox::new_2d(2.0, 3.0, 3.0, 4.0);
    for view in mirror_views(dims) {
        let m = view.apply(&v);
        let b = view.forward_box(&pixel);
        assert_eq!(m.get(b.min[0] as usize, b.min[1] as usize, 0), 1.0);
    }
}

#[test]
fn symmetric_scene_gives_identical_view_predictions() {
    let dims = [64, 64, 1];
    let base = noise(dims, 2);
    let mut sym = Volume::zeros(dims);
    for y in 0..64 {
        for x in 0..64 {
            let (ix, iy) = (x.min(63 - x), y.min(63 - y));
            sym.set(x, y, 0, base.get(ix, iy, 0));
        }
    }
    let model = Detector::new(DetectorConfig::desk(GradingHead::Regressor), 4).unwrap();
    let reference = model.predict(&sym).unwrap();
    assert!(!reference.is_empty());
    for view in mirror_views(dims) {
        let mirrored = view.apply(&sym);
        assert_eq!(mirrored, sym);
        let preds = model.predict(&mirrored).unwrap();
        assert_eq!(preds.len(), reference.len());
        for (p, r) in preds.iter().zip(&reference) {
            for a in 0..2 {
                assert!((p.bbox.min[a] - r.bbox.min[a]).abs() < 1e-5);
                assert!((p.bbox.max[a] - r.bbox.max[a]).abs() < 1e-5);
            }
            assert_eq!(p.objectness, r.objectness);
        }
    }
}

#[test]
fn clustering_examples() {
    let cfg = ClusterConfig::default();
    let a = det(BBox::new_2d(0.0, 0.0, 10.0, 10.0), 0.9, 2.0);
    let out = weighted_box_clustering(&[sourced(a.clone(), 0, 0)], &cfg).unwrap();
    assert_eq!(out, vec![a.clone()]);

    let p = det(BBox::new_2d(0.0, 0.0, 10.0, 10.0), 0.6, 2.0);
    let q = det(BBox::new_2d(0.0, 0.0, 10.0, 10.0), 0.6, 4.0);
    let out = weighted_box_clustering(&[sourced(p, 0, 0), sourced(q, 1, 0)], &cfg).unwrap();
    assert_eq!(out.len(), 1);
    assert_abs_diff_eq!(score(&out[0]), 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out[0].objectness, 0.6, epsilon = 1e-12);

    let b = det(BBox::new_2d(1.0, 1.0, 11.0, 11.0), 0.3, 4.0);
    let overlap = iou(&a.bbox, &b.bbox).unwrap();
    assert_abs_diff_eq!(overlap, 81.0 / 119.0, epsilon = 1e-12);
    assert!(overlap > cfg.iou_threshold);
    let out = weighted_box_clustering(&[sourced(b, 0, 1), sourced(a, 0, 0)], &cfg).unwrap();
    assert_eq!(out.len(), 1);
    assert_abs_diff_eq!(score(&out[0]), (0.9 * 2.0 + 0.3 * 4.0) / 1.2, epsilon = 1e-12);
    assert_abs_diff_eq!(score(&out[0]), 2.5, epsilon = 1e-12);
    assert_abs_diff_eq!(out[0].bbox.min[0], 0.3 / 1.2, epsilon = 1e-12);
    assert_abs_diff_eq!(out[0].objectness, (0.81 + 0.09) / 1.2, epsilon = 1e-12);
}

#[test]
fn disjoint_boxes_stay_apart_and_small_clusters_drop() {
    let a = det(BBox::new_2d(0.0, 0.0, 10.0, 10.0), 0.9, 2.0);
    let b = det(BBox::new_2d(20.0, 20.0, 30.0, 30.0), 0.8, 4.0);
    let c = det(BBox::new_2d(20.5, 20.0, 30.5, 30.0), 0.7, 4.0);
    let pool = [sourced(a, 0, 0), sourced(b, 0, 0), sourced(c, 1, 0)];
    assert_eq!(
        weighted_box_clustering(&pool, &ClusterConfig::default()).unwrap().len(),
        2
    );
    let strict = ClusterConfig {
        min_cluster_size: 2,
        ..Default::default()
    };
    let out = weighted_box_clustering(&pool, &strict).unwrap();
    assert_eq!(out.len(), 1);
    assert!(out[0].bbox.min[0] > 20.0);
    assert!(ClusterConfig {
        iou_threshold: 1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn class_probabilities_are_averaged() {
    let b = BBox::new_2d(0.0, 0.0, 10.0, 10.0);
    let mk = |o: f64, p: Vec<f64>| Detection {
        bbox: b,
        objectness: o,
        grading: Grading::Probabilities(p),
    };
    let out = weighted_box_clustering(
        &[
            sourced(mk(0.75, vec![1.0, 0.0, 0.0, 0.0, 0.0]), 0, 0),
            sourced(mk(0.25, vec![0.0, 1.0, 0.0, 0.0, 0.0]), 1, 0),
        ],
        &ClusterConfig::default(),
    )
    .unwrap();
    match &out[0].grading {
        Grading::Probabilities(p) => {
            assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
        }
        Grading::Score(_) => panic!(),
    }
}

fn slice_det(slice: usize, b: BBox, o: f64, s: f64) -> SliceDetection {
    SliceDetection {
        slice,
        detection: det(b, o, s),
    }
}

#[test]
fn identical_boxes_on_three_slices_form_one_chain() {
    let b = BBox::new_2d(4.0, 4.0, 14.0, 12.0);
    let dets: Vec<SliceDetection> = (2..5).map(|z| slice_det(z, b, 0.8, 7.0)).collect();
    let out = consolidate_2d_to_3d(&dets, DEFAULT_Z_LINK_IOU).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].bbox, BBox::new_3d([4.0, 4.0, 2.0], [14.0, 12.0, 5.0]));
    assert_abs_diff_eq!(score(&out[0]), 7.0, epsilon = 1e-12);
}

#[test]
fn disjoint_boxes_on_one_slice_stay_separate() {
    let dets = [
        slice_det(0, BBox::new_2d(0.0, 0.0, 5.0, 5.0), 0.9, 1.0),
        slice_det(0, BBox::new_2d(10.0, 10.0, 15.0, 15.0), 0.8, 2.0),
    ];
    let out = consolidate_2d_to_3d(&dets, DEFAULT_Z_LINK_IOU).unwrap();
    assert_eq!(out.len(), 2);
    for d in &out {
        assert_eq!(d.bbox.ndim(), 3);
        assert_eq!((d.bbox.min[2], d.bbox.max[2]), (0.0, 1.0));
    }
}

#[test]
fn staircase_chain_matches_hand_computation() {
    let objs = [0.5, 0.9, 0.7, 0.6, 0.8];
    let scores = [4.0, 8.0, 12.0, 8.0, 4.0];
    let dets: Vec<SliceDetection> = (0..5)
        .map(|z| {
            slice_det(
                z,
                BBox::new_2d(z as f64, 0.0, 10.0 + z as f64, 10.0),
                objs[z],
                scores[z],
            )
        })
        .collect();
    // Adjacent steps overlap by 9 / 11.
    assert!(iou(&dets[0].detection.bbox, &dets[1].detection.bbox).unwrap() > DEFAULT_Z_LINK_IOU);
    let out = consolidate_2d_to_3d(&dets, DEFAULT_Z_LINK_IOU).unwrap();
    assert_eq!(out.len(), 1);
    let total: f64 = objs.iter().sum();
    let x0: f64 = (0..5).map(|z| objs[z] * z as f64).sum::<f64>() / total;
    let s: f64 = (0..5).map(|z| objs[z] * scores[z]).sum::<f64>() / total;
    let o: f64 = objs.iter().map(|v| v * v).sum::<f64>() / total;
    let b = out[0].bbox;
    assert_abs_diff_eq!(b.min[0], x0, epsilon = 1e-12);
    assert_abs_diff_eq!(b.max[0], x0 + 10.0, epsilon = 1e-12);
    assert_eq!((b.min[1], b.max[1], b.min[2], b.max[2]), (0.0, 10.0, 0.0, 5.0));
    assert_abs_diff_eq!(score(&out[0]), s, epsilon = 1e-12);
    assert_abs_diff_eq!(out[0].objectness, o, epsilon = 1e-12);
}

#[test]
fn chains_break_on_gaps_and_low_overlap() {
    let b = BBox::new_2d(0.0, 0.0, 10.0, 10.0);
    let far = BBox::new_2d(8.0, 0.0, 18.0, 10.0);
    let dets = [
        slice_det(0, b, 0.9, 1.0),
        slice_det(2, b, 0.9, 1.0),
        slice_det(3, far, 0.9, 1.0),
    ];
    let out = consolidate_2d_to_3d(&dets, DEFAULT_Z_LINK_IOU).unwrap();
    assert_eq!(out.len(), 3);
    assert!(consolidate_2d_to_3d(&[slice_det(0, BBox::new_3d([0.0; 3], [1.0; 3]), 0.5, 1.0)], 0.3).is_err());
}

#[test]
fn two_objects_crossing_slices_keep_their_best_links() {
    // Two columns; on slice 1 the boxes are listed in reverse objectness order.
    let l = BBox::new_2d(0.0, 0.0, 10.0, 10.0);
    let r = BBox::new_2d(12.0, 0.0, 22.0, 10.0);
    let dets = [
        slice_det(0, l, 0.9, 4.0),
        slice_det(0, r, 0.8, 20.0),
        slice_det(1, r, 0.95, 20.0),
        slice_det(1, l, 0.5, 4.0),
    ];
    let out = consolidate_2d_to_3d(&dets, DEFAULT_Z_LINK_IOU).unwrap();
    assert_eq!(out.len(), 2);
    for d in &out {
        assert_eq!((d.bbox.min[2], d.bbox.max[2]), (0.0, 2.0));
        let s = score(d);
        assert!(s == 4.0 || s == 20.0);
    }
}

fn member(seed: u64) -> Detector {
    Detector::new(DetectorConfig::desk(GradingHead::Regressor), seed).unwrap()
}

#[test]
fn degenerate_ensemble_equals_predict() {
    let m = member(1);
    let v = noise([64, 64, 1], 3);
    let cfg = EnsembleConfig {
        mirror_views: false,
        ..Default::default()
    };
    assert_eq!(
        run_ensemble(std::slice::from_ref(&m), &v, &cfg).unwrap(),
        m.predict(&v).unwrap()
    );
}

#[test]
fn duplicate_members_collapse() {
    let v = noise([64, 64, 1], 3);
    let single = run_ensemble(&[member(1)], &v, &EnsembleConfig::default()).unwrap();
    let four: Vec<Detector> = (0..4).map(|_| member(1)).collect();
    let pooled = run_ensemble(&four, &v, &EnsembleConfig::default()).unwrap();
    assert_eq!(single.len(), pooled.len());
    for (a, b) in single.iter().zip(&pooled) {
        for k in 0..2 {
            assert!((a.bbox.min[k] - b.bbox.min[k]).abs() < 1e-9);
            assert!((a.bbox.max[k] - b.bbox.max[k]).abs() < 1e-9);
        }
        assert!((a.objectness - b.objectness).abs() < 1e-9);
        assert!((score(a) - score(b)).abs() < 1e-9);
    }
}

#[test]
fn ensemble_rejects_mixed_configs_and_empty_lists() {
    let v = noise([64, 64, 1], 3);
    let cls = Detector::new(DetectorConfig::desk(GradingHead::Classifier), 1).unwrap();
    let err = run_ensemble(&[member(1), cls], &v, &EnsembleConfig::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(run_ensemble(&[], &v, &EnsembleConfig::default()).is_err());
}

#[test]
fn planar_model_on_a_stack_predicts_per_slice() {
    let v = noise([64, 64, 3], 5);
    let out = run_ensemble(&[member(2)], &v, &EnsembleConfig::default()).unwrap();
    assert!(!out.is_empty());
    for d in &out {
        assert_eq!(d.bbox.ndim(), 3);
        assert!(d.bbox.min[2] >= 0.0 && d.bbox.max[2] <= 3.0);
        assert_eq!(d.bbox.min[2].fract(), 0.0);
        assert_eq!(d.bbox.max[2].fract(), 0.0);
    }
}

fn arb_detection() -> impl Strategy<Value = SourcedDetection> {
    (
        0.0f64..40.0,
        0.0f64..40.0,
        2.0f64..20.0,
        2.0f64..20.0,
        0.01f64..1.0,
        0.0f64..25.0,
        0usize..3,
        0usize..4,
    )
        .prop_map(|(x, y, w, h, o, s, m, v)| sourced(det(BBox::new_2d(x, y, x + w, y + h), o, s), m, v))
}

proptest! {
    #[test]
    fn consolidated_boxes_stay_inside_member_hull(dets in prop::collection::vec(arb_detection(), 1..12)) {
        let cfg = ClusterConfig::default();
        let out = weighted_box_clustering(&dets, &cfg).unwrap();
        let clusters = oracle_clusters(&dets, cfg.iou_threshold);
        prop_assert_eq!(out.len(), clusters.len());
        for (c, members) in out.iter().zip(&clusters) {
            let members: Vec<&Detection> = members.iter().map(|&i| &dets[i].detection).collect();
            let lo = members.iter().map(|d| d.objectness).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|d| d.objectness).fold(0.0, f64::max);
            prop_assert!(c.objectness <= hi + 1e-12 && c.objectness >= lo - 1e-12);
            for a in 0..2 {
                let mn = members.iter().map(|d| d.bbox.min[a]).fold(f64::INFINITY, f64::min);
                let mx = members.iter().map(|d| d.bbox.max[a]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(c.bbox.min[a] >= mn - 1e-9 && c.bbox.max[a] <= mx + 1e-9);
            }
        }
    }

    #[test]
    fn clustering_ignores_input_order(dets in prop::collection::vec(arb_detection(), 1..10), rot in 0usize..10) {
        let mut shuffled = dets.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let a = weighted_box_clustering(&dets, &ClusterConfig::default()).unwrap();
        let b = weighted_box_clustering(&shuffled, &ClusterConfig::default()).unwrap();
        // Ties on (objectness, member, view) are measure-zero for continuous draws.
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.objectness - y.objectness).abs() < 1e-12);
            prop_assert!((x.bbox.min[0] - y.bbox.min[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn stacking_never_adds_boxes(raw in prop::collection::vec((0usize..6, arb_detection()), 0..15)) {
        let dets: Vec<SliceDetection> = raw.into_iter().map(|(z, d)| SliceDetection { slice: z, detection: d.detection }).collect();
        let out = consolidate_2d_to_3d(&dets, DEFAULT_Z_LINK_IOU).unwrap();
        prop_assert!(out.len() <= dets.len());
        for d in &out {
            prop_assert!(d.bbox.max[2] > d.bbox.min[2]);
            prop_assert_eq!(d.bbox.min[2].fract(), 0.0);
            prop_assert!(d.bbox.max[2] <= 6.0);
        }
    }
}
