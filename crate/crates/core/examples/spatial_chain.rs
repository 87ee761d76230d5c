//! Real-space Metropolis chain on positions and permutation.

use std::f64::consts::PI;

use spatperm::kernel::{critical_density, BoxGeometry, JumpKernel};
use spatperm::spatial::{default_plateau_k, nu_sweep, run_chain, ChainParams, SpatialModel};
use spatperm::weights::CycleWeightModel;

fn main() -> spatperm::error::Result<()> {
    let kernel = JumpKernel::gaussian(3, 1.0 / (4.0 * PI))?;
    let w = CycleWeightModel::constant(0.0)?;
    let n = 64;
    let rc = critical_density(&kernel, &w, 1e-12)?.value;
    let geom = BoxGeometry::with_energy_cutoff(&kernel, (n as f64 / (2.0 * rc)).cbrt(), 40.0)?;
    let model = SpatialModel::new(&kernel, &w, &geom, n)?;
    let params = ChainParams { sweeps: 20_000, burn_in: 2_000, thin: 10, seed: 4, ..ChainParams::default() };
    let out = run_chain(&model, &params)?;
    let d = &out.diagnostics;
    println!("acceptance: position {:.3}, swap {:.3}", d.position_acceptance, d.swap_acceptance);
    println!("energy Geweke z {:.2}, largest audit error {:.1e}", d.geweke_z, d.max_audit_error);
    let k = default_plateau_k(n);
    let nu = nu_sweep(&out.spectra(), &w, &[k], k)?;
    println!("nu plateau (K = {k}): {:.4} +- {:.4}", nu.plateau.mean, nu.plateau.stderr);
    Ok(())
}
