//! Generate a small noisy-label cylinder benchmark and print its annotations.
//!
//! cargo run --release --example generate_toy -- /tmp/toy

use grading_detector::dataset::Dataset;
use grading_detector::toy_data::{generate_dataset, ToyConfig};

fn main() -> grading_detector::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy_data".into());
    let cfg = ToyConfig::desk_2d();
    generate_dataset(&cfg, 8, 2, out.as_ref())?;
    let ds = Dataset::read(out.as_ref())?;
    for scene in &ds.scenes {
        for a in &scene.annotations {
            println!(
                "{} roi {} box {:?}-{:?} score {:.2} category {}",
                scene.id, a.id, a.bbox.min, a.bbox.max, a.exact_score, a.category
            );
        }
    }
    println!("wrote {} scenes to {out}", ds.scenes.len());
    Ok(())
}
