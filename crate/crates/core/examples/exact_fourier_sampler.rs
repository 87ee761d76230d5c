//! Exact occupation numbers from the mode-by-mode partition tables.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::fourier::{build_tables, sample_cycles_given_occupations, sample_occupations_exact, ModeSet};
use spatperm::kernel::{critical_density, JumpKernel};
use spatperm::weights::{compute_h, CycleWeightModel};

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::gaussian(3, 1.0 / (4.0 * PI))?;
    let w = CycleWeightModel::constant(0.0)?;
    let n = 128;
    let rc = critical_density(&kernel, &w, 1e-12)?.value;
    let side = (n as f64 / (2.0 * rc)).cbrt();
    let modes = ModeSet::with_cutoff(&kernel, side, 40.0)?;
    let table = compute_h(&w, n)?;
    let tables = build_tables(&modes, &table, n)?;
    println!("N = {n}, L = {side:.4}, {} modes, Y identity residual {:.1e}", modes.len(), tables.identity_residual());
    println!("exact E[n0/N] = {:.4}", tables.mean_zero_fraction());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..5 {
        let occ = sample_occupations_exact(&tables, &mut rng);
        let cycles = sample_cycles_given_occupations(&occ, &table, &mut rng);
        let longest = cycles.iter().map(|c| c.1).max().unwrap_or(0);
        println!("draw {i}: n0 = {:>3}, occupied modes = {:>2}, longest cycle = {longest}", occ.get(modes.zero_index()), occ.iter().count());
    }
    Ok(())
}
