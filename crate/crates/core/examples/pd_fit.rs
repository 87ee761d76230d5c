//! Normalized cycle lengths of Ewens permutations against PD(theta).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::stats::{pd_fit_test, CycleSpectrum};
use spatperm::weights::{compute_h, CycleLengthSampler, CycleWeightModel};

fn main() -> spatperm::error::Result<()> {
    let theta: f64 = 2.0;
    let n = 1000;
    let table = compute_h(&CycleWeightModel::constant(-theta.ln())?, n)?;
    let sampler = CycleLengthSampler::new(&table);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spectra: Vec<CycleSpectrum> = (0..5000).map(|_| CycleSpectrum::new(sampler.sample(n, &mut rng))).collect::<Result<_, _>>()?;
    let fit = pd_fit_test(&spectra, 1.0, theta, 3, 20_000, &mut rng)?;
    print!("{}", fit.to_table());
    println!("sum of squares limit 1/(1+theta) = {:.4}", 1.0 / (1.0 + theta));
    Ok(())
}
