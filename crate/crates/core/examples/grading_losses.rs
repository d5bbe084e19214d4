//! Compare the two grading losses on the same ordinal target. Cross-entropy
//! charges a near miss as much as a far one; smooth L1 grows with distance.

use grading_detector::losses::{cross_entropy, smooth_l1, CategoricalTarget};

fn main() -> grading_detector::Result<()> {
    let centers = [4.0, 8.0, 12.0, 16.0, 20.0];
    let target = 2;
    println!("target bin {target} (score {})", centers[target]);
    for predicted in 0..centers.len() {
        // Confident one-hot logits on the predicted bin.
        let mut logits = [0.0; 5];
        logits[predicted] = 4.0;
        let ce = cross_entropy(&logits, CategoricalTarget::new(target, 5)?)?;
        let l1 = smooth_l1(centers[predicted], centers[target]);
        println!("predict bin {predicted}: cross-entropy {ce:.3}  smooth L1 {l1:.3}");
    }
    Ok(())
}
