//! Cross-validation folds over scene ids, written to and read back from JSON.

use grading_detector::data_pipeline::{make_cv_splits, SplitPlan};

fn main() -> grading_detector::Result<()> {
    let ids: Vec<String> = (0..20).map(|i| format!("scene_{i:04}")).collect();
    let plan = make_cv_splits(&ids, 5, 0)?;
    for (k, f) in plan.folds.iter().enumerate() {
        println!(
            "fold {k}: train {} val {} test {:?}",
            f.train.len(),
            f.val.len(),
            f.test
        );
    }
    let path = std::env::temp_dir().join("splits.json");
    plan.write(&path)?;
    assert_eq!(SplitPlan::read(&path)?, plan);
    println!("round trip ok: {}", path.display());
    Ok(())
}
