//! Long-cycle fraction over a grid of densities, compared with max(0, 1 - rho_c/rho).

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::fourier::{CycleFirstSampler, ModeSet};
use spatperm::kernel::{critical_density, JumpKernel};
use spatperm::spatial::{default_plateau_k, nu_sweep};
use spatperm::stats::CycleSpectrum;
use spatperm::weights::CycleWeightModel;

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::gaussian(3, 1.0 / (4.0 * PI))?;
    let w = CycleWeightModel::constant(0.0)?;
    let n = 1024;
    let k = default_plateau_k(n);
    let rc = critical_density(&kernel, &w, 1e-12)?.value;
    println!("{:>9} {:>8} {:>8} {:>8} {:>8}", "rho/rho_c", "nu_hat", "stderr", "limit", "box");
    for factor in [0.5, 0.8, 1.0, 1.25, 1.5, 2.0, 3.0] {
        let modes = ModeSet::with_cutoff(&kernel, (n as f64 / (factor * rc)).cbrt(), 40.0)?;
        let sampler = CycleFirstSampler::new(&modes, &w, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spectra: Vec<CycleSpectrum> = (0..1000).map(|_| CycleSpectrum::new(sampler.sample(&mut rng).lengths())).collect::<Result<_, _>>()?;
        let nu = nu_sweep(&spectra, &w, &[k], k)?.plateau;
        let boxed = (1.0 - modes.critical_density(&w)? / (factor * rc)).max(0.0);
        println!("{factor:>9.2} {:>8.4} {:>8.4} {:>8.4} {boxed:>8.4}", nu.mean, nu.stderr, (1.0 - 1.0 / factor).max(0.0));
    }
    Ok(())
}
