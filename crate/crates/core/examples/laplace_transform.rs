//! Laplace transform of the density fluctuations around rho_c(box).

use std::f64::consts::PI;

use spatperm::fourier::{build_tables, mu_lambda_laplace, ModeSet, MuLambda};
use spatperm::kernel::JumpKernel;
use spatperm::weights::{compute_h, CycleWeightModel};

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::gaussian(3, 1.0 / (4.0 * PI))?;
    let w = CycleWeightModel::constant(0.0)?;
    for side in [8.0f64, 16.0, 32.0, 64.0] {
        let modes = ModeSet::with_cutoff(&kernel, side, 40.0)?;
        let v = side.powi(3);
        let lambda = v.powf(1.0 / 6.0);
        println!("L = {side:>4}: lambda = {lambda:.3}, E[exp(lambda (X - rho_c))] = {:.5}", mu_lambda_laplace(&modes, &w, lambda)?);
    }
    // closed form against the direct sum on a toy system
    let modes = ModeSet::from_energies(2.0, &[0.8, 1.3])?;
    let table = compute_h(&w, 400)?;
    let mu = MuLambda::from_tables(&build_tables(&modes, &table, 400)?, &modes, &w)?;
    for lambda in [-0.5, 0.5, 1.0] {
        println!("toy lambda = {lambda}: closed {:.12}, direct {:.12}", mu_lambda_laplace(&modes, &w, lambda)?, mu.laplace(lambda));
    }
    Ok(())
}
