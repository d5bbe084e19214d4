//! Score a hand-made set of detections with AP10, AVP10 and bin accuracy.

use grading_detector::detector::{Detection, Grading};
use grading_detector::eval_metrics::{evaluate_scenes, BinningScheme, GtObject, EVAL_IOU};
use grading_detector::geometry::BBox;

fn det(x: f64, objectness: f64, score: f64) -> Detection {
    Detection {
        bbox: BBox::new_2d(x, 10.0, x + 12.0, 22.0),
        objectness,
        grading: Grading::Score(score),
    }
}

fn main() -> grading_detector::Result<()> {
    let scheme = BinningScheme::new(vec![4.0, 8.0, 12.0, 16.0, 20.0])?;
    let gts = vec![
        GtObject {
            bbox: BBox::new_2d(10.0, 10.0, 22.0, 22.0),
            score: 12.0,
        },
        GtObject {
            bbox: BBox::new_2d(40.0, 10.0, 52.0, 22.0),
            score: 20.0,
        },
    ];
    let dets = vec![
        // Found and graded right.
        det(11.0, 0.95, 12.8),
        // Found, wrong bin.
        det(41.0, 0.90, 15.0),
        // False positive.
        det(80.0, 0.30, 8.0),
    ];
    let (m, results) = evaluate_scenes(&[(dets, gts)], &scheme, EVAL_IOU)?;
    for d in &results[0].detections {
        println!("{:?}", d);
    }
    println!(
        "AP10 {:.3}  AVP10 {:.3}  bin accuracy {:.3}",
        m.ap10.unwrap_or(0.0),
        m.avp10.unwrap_or(0.0),
        m.bin_accuracy.unwrap_or(0.0)
    );
    Ok(())
}
