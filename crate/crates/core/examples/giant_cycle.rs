//! Logarithmic weights: nearly all points in long cycles sit in one cycle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::stats::{giant_cycle_test, CycleSpectrum};
use spatperm::weights::{compute_h, CycleLengthSampler, CycleWeightModel};

fn main() -> spatperm::error::Result<()> {
    let n = 2048;
    for gamma in [0.5, 1.0, 2.0] {
        let table = compute_h(&CycleWeightModel::logarithmic(gamma)?, n)?;
        let sampler = CycleLengthSampler::new(&table);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spectra: Vec<CycleSpectrum> = (0..2000).map(|_| CycleSpectrum::new(sampler.sample(n, &mut rng))).collect::<Result<_, _>>()?;
        let g = giant_cycle_test(&spectra, 1.0)?;
        println!("gamma = {gamma}: P(l1/N > 0.9) = {:.4}, mean l1/N = {:.4}", g.p_above_0_9, g.mean);
    }
    // for comparison, uniform permutations
    let table = compute_h(&CycleWeightModel::constant(0.0)?, n)?;
    let sampler = CycleLengthSampler::new(&table);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spectra: Vec<CycleSpectrum> = (0..2000).map(|_| CycleSpectrum::new(sampler.sample(n, &mut rng))).collect::<Result<_, _>>()?;
    println!("uniform: P(l1/N > 0.9) = {:.4}", giant_cycle_test(&spectra, 1.0)?.p_above_0_9);
    Ok(())
}
