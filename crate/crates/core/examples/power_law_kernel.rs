//! One-dimensional power-law jump kernel: dispersion and critical density.

use spatperm::kernel::{critical_density, JumpKernel};
use spatperm::weights::CycleWeightModel;

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::power_law_1d(1.5, None)?;
    let g = kernel.growth();
    println!("growth certificate: eps(k) >= {:.4} |k|^{:.2}", g.a, g.eta);
    for k in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
        println!("eps({k}) = {:.6}  (pi sqrt(k) = {:.6})", kernel.dispersion_norm(k)?, std::f64::consts::PI * k.sqrt());
    }
    let rc = critical_density(&kernel, &CycleWeightModel::constant(0.0)?, 1e-6)?;
    println!("rho_c = {:.6} (residual {:.1e})", rc.value, rc.residual);
    Ok(())
}
