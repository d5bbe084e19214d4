//! Mirror-view test-time augmentation and weighted box clustering.
//!
//! Three boxes from different members and views are fused into one
//! objectness-weighted box, then an untrained two-member ensemble is run on a
//! toy scene end to end.

use grading_detector::detector::{Detection, Detector, DetectorConfig, Grading, GradingHead};
use grading_detector::geometry::BBox;
use grading_detector::inference::{
    mirror_views, run_ensemble, weighted_box_clustering, ClusterConfig, EnsembleConfig, SourcedDetection,
};
use grading_detector::toy_data::{generate_scenes, ToyConfig};

fn main() -> grading_detector::Result<()> {
    let b = BBox::new_2d(10.0, 6.0, 30.0, 18.0);
    for v in mirror_views([64, 48, 1]) {
        println!("{v:?}: {:?}-{:?}", v.forward_box(&b).min, v.forward_box(&b).max);
    }

    let pooled: Vec<SourcedDetection> = [(0.0, 0.9, 10.0), (1.0, 0.6, 14.0), (0.5, 0.3, 12.0)]
        .iter()
        .enumerate()
        .map(|(i, &(dx, o, s))| SourcedDetection {
            detection: Detection {
                bbox: BBox::new_2d(10.0 + dx, 10.0, 30.0 + dx, 30.0),
                objectness: o,
                grading: Grading::Score(s),
            },
            member: i % 2,
            view: i,
        })
        .collect();
    for d in weighted_box_clustering(&pooled, &ClusterConfig::default())? {
        println!(
            "fused {:?}-{:?} objectness {:.3} grading {:?}",
            d.bbox.min, d.bbox.max, d.objectness, d.grading
        );
    }

    let toy = ToyConfig {
        volume_shape: [64, 64, 1],
        ..ToyConfig::desk_2d()
    };
    let scene = &generate_scenes(&toy, 0, 1)?[0];
    let members = vec![
        Detector::new(DetectorConfig::desk(GradingHead::Regressor), 0)?,
        Detector::new(DetectorConfig::desk(GradingHead::Regressor), 1)?,
    ];
    let dets = run_ensemble(&members, &scene.volume, &EnsembleConfig::default())?;
    println!("untrained ensemble: {} detections on {}", dets.len(), scene.scene_id);
    Ok(())
}
