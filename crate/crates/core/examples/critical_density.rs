//! Critical density of the Gaussian kernel and its finite-box values.

use std::f64::consts::PI;

use spatperm::kernel::{critical_density, finite_volume_critical_density, BoxGeometry, JumpKernel};
use spatperm::weights::CycleWeightModel;

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::gaussian(3, 1.0 / (4.0 * PI))?;
    for alpha in [0.0, 2f64.ln()] {
        let w = CycleWeightModel::constant(alpha)?;
        let rc = critical_density(&kernel, &w, 1e-12)?;
        println!("alpha = {alpha:.4}: rho_c = {:.9} (residual {:.1e})", rc.value, rc.residual);
        for side in [8.0, 16.0, 32.0, 64.0] {
            let geom = BoxGeometry::with_energy_cutoff(&kernel, side, 40.0)?;
            let fv = finite_volume_critical_density(&kernel, &w, &geom, None)?;
            println!("  L = {side:>4}: rho_c(box) = {:.6}  relative gap {:+.4}", fv.value, fv.value / rc.value - 1.0);
        }
    }
    Ok(())
}
