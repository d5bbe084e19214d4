//! Paired training of both grading heads on identical batches, followed by
//! test-set evaluation and the results table. Small enough to finish in a few
//! minutes; raise `epochs` and the dataset size for meaningful numbers.
//!
//! cargo run --release --example train_and_compare -- /tmp/compare

use std::path::PathBuf;

use grading_detector::detector::GradingHead;
use grading_detector::experiment::{compare, ExperimentConfig};
use grading_detector::toy_data::{generate_dataset, ToyConfig};

fn main() -> grading_detector::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "compare_run".into()));
    let data = root.join("data");
    let toy = ToyConfig {
        volume_shape: [64, 64, 1],
        ..ToyConfig::desk_2d()
    };
    generate_dataset(&toy, 40, 10, &data)?;
    let cfg = ExperimentConfig {
        validation_scenes: 8,
        epochs: 3,
        batches_per_epoch: 10,
        batch_size: 4,
        crop_shape: [64, 64, 1],
        ..ExperimentConfig::desk(&data, root.join("runs"), GradingHead::Regressor)
    };
    let cmp = compare(&cfg, &[0], &[0])?;
    print!("{}", cmp.table.to_text());
    Ok(())
}
