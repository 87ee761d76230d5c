//! Transfer-move chain on occupation numbers against the exact law of a
//! two-mode system.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::fourier::{occupation_law_exact, ModeSet, OccupationChain};
use spatperm::stats::chi_square_gof;
use spatperm::weights::{compute_h, CycleWeightModel};

fn main() -> spatperm::error::Result<()> {
    let modes = ModeSet::from_energies(1.0, &[0.5])?;
    let n = 8;
    let table = compute_h(&CycleWeightModel::constant(0.0)?, n)?;
    let law = occupation_law_exact(&modes, &table, n)?;
    let mut chain = OccupationChain::new(&modes, &table, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    chain.run(1000, &mut rng);
    let mut counts = vec![0u64; law.len()];
    for _ in 0..50_000 {
        chain.run(10, &mut rng);
        counts[law.iter().position(|(c, _)| c.as_slice() == chain.occupations()).unwrap()] += 1;
    }
    for ((c, p), k) in law.iter().zip(&counts) {
        println!("{c:?}: exact {p:.4}, chain {:.4}", *k as f64 / 50_000.0);
    }
    let (stat, p, dof) = chi_square_gof(&counts, &law.iter().map(|x| x.1).collect::<Vec<_>>());
    println!("chi-square {stat:.2} on {dof} dof, p = {p:.3}; acceptance {:.3}", chain.acceptance_rate());
    Ok(())
}
