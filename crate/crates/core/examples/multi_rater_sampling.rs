//! Draw training targets from a four-rater annotation. Each draw picks one
//! rater uniformly, so the label frequencies track the rater votes.

use std::collections::BTreeMap;

use grading_detector::annotation::RoIAnnotation;
use grading_detector::data_pipeline::sample_training_target;
use grading_detector::eval_metrics::BinningScheme;
use grading_detector::geometry::BBox;
use grading_detector::rng::{stream, Stream};

fn main() -> grading_detector::Result<()> {
    let scheme = BinningScheme::integer_scale(1, 5)?;
    let ann = RoIAnnotation::from_raters(0, BBox::new_2d(4.0, 4.0, 12.0, 12.0), vec![2.0, 3.0, 3.0, 5.0], &scheme)?;
    println!("exact score {:.2}, category {}", ann.exact_score, ann.category);

    let mut rng = stream(0, Stream::RaterSampling, &[]);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for _ in 0..10_000 {
        *counts
            .entry(sample_training_target(&ann, &scheme, &mut rng)?.bin as u32 + 1)
            .or_default() += 1;
    }
    for (c, n) in counts {
        println!("category {c}: {:.3}", n as f64 / 10_000.0);
    }
    Ok(())
}
