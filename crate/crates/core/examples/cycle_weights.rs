//! Normalizations h_n of the weighted permutation measure for the three
//! weight regimes, checked against partition enumeration.

use spatperm::weights::{brute_force_h, compute_h, regularity_of, CycleWeightModel};

fn main() -> spatperm::error::Result<()> {
    let models = [
        ("constant alpha = 0.5", CycleWeightModel::constant(0.5)?),
        ("asymptotic, alpha_1 = -1", CycleWeightModel::asymptotic(0.0, vec![(1, -1.0)])?),
        ("logarithmic gamma = 1", CycleWeightModel::logarithmic(1.0)?),
    ];
    for (name, m) in &models {
        let t = compute_h(m, 1000)?;
        let worst = (1..=10)
            .map(|n| (t.h(n) / brute_force_h(m, n).unwrap() - 1.0).abs())
            .fold(0.0, f64::max);
        let r = regularity_of(&t, 2.0);
        println!("{name}");
        println!("  log h_10 = {:.6}, log h_1000 = {:.4}", t.log_h(10), t.log_h(1000));
        println!("  enumeration check n <= 10: {worst:.1e}");
        println!("  tail slope of log h_n vs log n: {:.3}", r.tail_slope);
    }
    Ok(())
}
