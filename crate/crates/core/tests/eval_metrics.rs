mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng as _;

use common::*;
use grading_detector::detector::{Detection, Grading};
use grading_detector::eval_metrics::*;
use grading_detector::geometry::BBox;
use grading_detector::rng::{stream, Stream};

fn unit_box() -> BBox {
    BBox::new_2d(0.0, 0.0, 10.0, 10.0)
}

#[test]
fn binning_examples() {
    let s = toy_scheme();
    assert_eq!(s.edges(), &[6.0, 10.0, 14.0, 18.0]);
    for (k, c) in s.centers().iter().enumerate() {
        assert_eq!(s.bin(*c).unwrap(), k);
    }
    assert_eq!(s.bin(9.9).unwrap(), 1);
    assert_eq!(s.bin(10.0).unwrap(), 2);
    assert_eq!(s.bin(-3.0).unwrap(), 0);
    assert_eq!(s.bin(99.0).unwrap(), 4);
    assert!(s.bin(f64::NAN).is_err());
}

#[test]
fn iou_examples() {
    let a = BBox::new_2d(0.0, 0.0, 2.0, 2.0);
    let b = BBox::new_2d(1.0, 0.0, 3.0, 2.0);
    assert_eq!(iou(&a, &a).unwrap(), 1.0);
    assert_eq!(iou(&a, &BBox::new_2d(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
    let ra = Rect {
        x0: 0,
        y0: 0,
        x1: 2,
        y1: 2,
    };
    let rb = Rect {
        x0: 1,
        y0: 0,
        x1: 3,
        y1: 2,
    };
    assert_abs_diff_eq!(iou(&a, &b).unwrap(), q_to_f64(iou_by_cells(&ra, &rb)), epsilon = 1e-15);
    assert_abs_diff_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    assert!(iou(&a, &BBox::new_3d([0.0; 3], [1.0; 3])).is_err());
}

#[test]
fn matching_examples() {
    let s = toy_scheme();
    let gts = [gt(unit_box(), 12.0)];
    let r = match_detections(&[det(unit_box(), 0.9, 12.5)], &gts, &s, EVAL_IOU).unwrap();
    assert!(r.detections[0].detection_tp && r.detections[0].graded_tp);
    let r = match_detections(&[det(unit_box(), 0.9, 8.0)], &gts, &s, EVAL_IOU).unwrap();
    assert!(r.detections[0].detection_tp && !r.detections[0].graded_tp);

    let shifted = BBox::new_2d(1.0, 0.0, 11.0, 10.0);
    let r = match_detections(
        &[det(shifted, 0.8, 12.0), det(unit_box(), 0.9, 12.0)],
        &gts,
        &s,
        EVAL_IOU,
    )
    .unwrap();
    assert!(r.detections[1].detection_tp);
    assert!(!r.detections[0].detection_tp);
    assert_eq!(r.gt_matched, vec![true]);
}

#[test]
fn classifier_gradings_use_argmax() {
    let s = toy_scheme();
    let d = Detection {
        bbox: unit_box(),
        objectness: 0.9,
        grading: Grading::Probabilities(vec![0.1, 0.2, 0.4, 0.2, 0.1]),
    };
    let r = match_detections(&[d], &[gt(unit_box(), 12.0)], &s, EVAL_IOU).unwrap();
    assert!(r.detections[0].graded_tp);
    assert_eq!(r.detections[0].predicted_bin, 2);
}

#[test]
fn iou_threshold_is_strict() {
    // IoU exactly 0.1: 10x10 box vs. a 1x10 sliver of it.
    let s = toy_scheme();
    let sliver = BBox::new_2d(0.0, 0.0, 1.0, 10.0);
    assert_abs_diff_eq!(iou(&sliver, &unit_box()).unwrap(), 0.1, epsilon = 1e-15);
    let r = match_detections(&[det(sliver, 0.9, 12.0)], &[gt(unit_box(), 12.0)], &s, EVAL_IOU).unwrap();
    assert!(!r.detections[0].detection_tp);
}

#[test]
fn ap_examples() {
    assert_eq!(average_precision_ranked(&[(0.9, true), (0.8, true)], 2), Some(1.0));
    let ap = average_precision_ranked(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
    assert_abs_diff_eq!(ap, 5.0 / 6.0, epsilon = 1e-15);
    assert_eq!(q_to_f64(oracle_ap(&[true, false, true], 2).unwrap()), 5.0 / 6.0);
    assert_eq!(average_precision_ranked(&[(0.9, false)], 0), None);
    assert_eq!(average_precision_ranked(&[], 3), Some(0.0));
}

#[test]
fn all_wrong_bins_zero_avp() {
    let s = toy_scheme();
    let scenes = vec![(vec![det(unit_box(), 0.9, 20.0)], vec![gt(unit_box(), 4.0)])];
    let (m, _) = evaluate_scenes(&scenes, &s, EVAL_IOU).unwrap();
    assert_eq!(m.ap10, Some(1.0));
    assert_eq!(m.avp10, Some(0.0));
    assert_eq!(m.bin_accuracy, Some(0.0));
}

#[test]
fn bin_accuracy_counts_graded_over_detection_tps() {
    let s = toy_scheme();
    let boxes: Vec<BBox> = (0..3)
        .map(|i| BBox::new_2d(20.0 * i as f64, 0.0, 20.0 * i as f64 + 10.0, 10.0))
        .collect();
    let dets = vec![
        det(boxes[0], 0.9, 4.0),
        det(boxes[1], 0.8, 4.0),
        det(boxes[2], 0.7, 4.0),
    ];
    let gts = vec![gt(boxes[0], 4.0), gt(boxes[1], 12.0), gt(boxes[2], 20.0)];
    let (m, _) = evaluate_scenes(&[(dets, gts)], &s, EVAL_IOU).unwrap();
    assert_abs_diff_eq!(m.bin_accuracy.unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    let (m, _) = evaluate_scenes(&[(vec![], vec![gt(boxes[0], 4.0)])], &s, EVAL_IOU).unwrap();
    assert_eq!(m.bin_accuracy, None);
}

#[test]
fn aggregate_examples() {
    let a = aggregate_folds(&[0.5; 5]).unwrap();
    assert_eq!((a.mean, a.std), (0.5, Some(0.0)));
    let a = aggregate_folds(&[0.0, 1.0]).unwrap();
    assert_eq!((a.mean, a.std), (0.5, Some(0.5)));
    let a = aggregate_folds(&[0.7]).unwrap();
    assert_eq!(a.std, None);
    assert_eq!(a.to_string(), "0.700");
    let row = Aggregate {
        mean: 0.859,
        std: Some(0.021),
        folds: 5,
    };
    assert_eq!(row.to_string(), "0.859 ± 0.021");
    assert!(aggregate_folds(&[]).is_err());
}

#[test]
fn interchange_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = det(unit_box(), 0.75, 9.5);
    let recs = vec![DetectionRecord::new("s1", &d)];
    let path = dir.path().join("d.jsonl");
    write_jsonl(&path, &recs).unwrap();
    let back: Vec<DetectionRecord> = read_jsonl(&path).unwrap();
    assert_eq!(back[0].detection(), d);
    std::fs::write(&path, "{\"scene_id\": 3}\n").unwrap();
    let err = read_jsonl::<DetectionRecord>(&path).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn metrics_equal_brute_force_oracle() {
    let s = toy_scheme();
    let mut rng = stream(2024, Stream::Init, &[]);
    for case in 0..500 {
        let scenes: Vec<_> = (0..rng.random_range(1..=2))
            .map(|_| random_instance(&mut rng))
            .collect();
        let lib: Vec<_> = scenes.iter().map(|(d, g)| to_library(d, g)).collect();
        let (m, results) = evaluate_scenes(&lib, &s, EVAL_IOU).unwrap();

        let mut pooled: Vec<(i64, bool, bool)> = Vec::new();
        let mut n_gt = 0;
        for ((d, g), r) in scenes.iter().zip(&results) {
            let flags = oracle_match(d, g);
            for (k, f) in flags.iter().enumerate() {
                assert_eq!(
                    (r.detections[k].detection_tp, r.detections[k].graded_tp),
                    *f,
                    "case {case}"
                );
            }
            pooled.extend(d.iter().zip(&flags).map(|(x, f)| (x.confidence, f.0, f.1)));
            n_gt += g.len();
        }
        let order = oracle_rank(&pooled.iter().map(|p| p.0).collect::<Vec<_>>());
        let det_flags: Vec<bool> = order.iter().map(|&i| pooled[i].1).collect();
        let graded_flags: Vec<bool> = order.iter().map(|&i| pooled[i].2).collect();
        let ap = q_to_f64(oracle_ap(&det_flags, n_gt).unwrap());
        let avp = q_to_f64(oracle_ap(&graded_flags, n_gt).unwrap());
        assert!(
            (m.ap10.unwrap() - ap).abs() <= 1e-12,
            "case {case}: {:?} vs {ap}",
            m.ap10
        );
        assert!((m.avp10.unwrap() - avp).abs() <= 1e-12, "case {case}");
        let tps = det_flags.iter().filter(|&&t| t).count();
        let graded = graded_flags.iter().filter(|&&t| t).count();
        let acc = (tps > 0).then(|| graded as f64 / tps as f64);
        assert_eq!(m.bin_accuracy, acc, "case {case}");
        assert!(m.avp10.unwrap() <= m.ap10.unwrap());
    }
}

proptest! {
    #[test]
    fn ap_invariant_under_confidence_rescaling(
        flags in prop::collection::vec(any::<bool>(), 0..12),
        conf in prop::collection::vec(0.01f64..1.0, 12),
        extra_gt in 0usize..4,
        scale in 0.01f64..100.0,
    ) {
        let n_gt = flags.iter().filter(|&&f| f).count() + extra_gt;
        prop_assume!(n_gt > 0);
        let ranked: Vec<(f64, bool)> = flags.iter().zip(&conf).map(|(&f, &c)| (c, f)).collect();
        let scaled: Vec<(f64, bool)> = ranked.iter().map(|&(c, f)| (c * scale, f)).collect();
        let squashed: Vec<(f64, bool)> = ranked.iter().map(|&(c, f)| (c.powi(3), f)).collect();
        let a = average_precision_ranked(&ranked, n_gt).unwrap();
        prop_assert_eq!(a, average_precision_ranked(&scaled, n_gt).unwrap());
        prop_assert_eq!(a, average_precision_ranked(&squashed, n_gt).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn each_gt_matched_at_most_once(seed in 0u64..10_000) {
        let mut rng = stream(seed, Stream::Init, &[1]);
        let (d, g) = random_instance(&mut rng);
        let (dets, gts) = to_library(&d, &g);
        let r = match_detections(&dets, &gts, &toy_scheme(), EVAL_IOU).unwrap();
        let mut seen = vec![0; gts.len()];
        for m in &r.detections {
            if let Some(k) = m.matched_gt {
                seen[k] += 1;
            }
            prop_assert!(!m.graded_tp || m.detection_tp);
        }
        prop_assert!(seen.iter().all(|&c| c <= 1));
    }
}
