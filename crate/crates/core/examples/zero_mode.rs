//! Zero-mode occupation above and below the critical density.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::fourier::{CycleFirstSampler, ModeSet, ZeroModeAccumulator, ZeroModeParams};
use spatperm::kernel::{critical_density, JumpKernel};
use spatperm::weights::CycleWeightModel;

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::gaussian(3, 1.0 / (4.0 * PI))?;
    let w = CycleWeightModel::constant(0.0)?;
    let n = 2048;
    let rc = critical_density(&kernel, &w, 1e-12)?.value;
    for factor in [0.5, 2.0] {
        let modes = ModeSet::with_cutoff(&kernel, (n as f64 / (factor * rc)).cbrt(), 40.0)?;
        let sampler = CycleFirstSampler::new(&modes, &w, n)?;
        let nu = (1.0 - 1.0 / factor).max(0.0);
        let params = ZeroModeParams { nu, eps: 0.1, delta: 0.25, m_large: 20, tail_modes: modes.lowest_shell_representatives(3) };
        let mut acc = ZeroModeAccumulator::new(&modes, params);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            acc.push(&sampler.sample(&mut rng).occupations);
        }
        let r = acc.finish()?;
        println!("rho = {factor} rho_c: mean n0/N = {:.4} (sd {:.4}), P(A) = {:.3}, P(B) = {:.3}, P(C) = {:.3}", r.mean_zero_fraction, r.sd_zero_fraction, r.p_a, r.p_b, r.p_c);
        for t in &r.tails {
            println!("  mode {:>6} eps {:.3}: max n_k {:>3}, envelope holds {}", t.mode, t.eps, t.observed_max, t.holds);
        }
    }
    Ok(())
}
