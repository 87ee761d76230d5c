use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatperm::kernel::{BoxGeometry, JumpKernel};
use spatperm::spatial::{run_chain, ChainParams, SpatialChain, SpatialConfig, SpatialModel};
use spatperm::weights::CycleWeightModel;

fn model(n: usize, side: f64, w: &CycleWeightModel) -> SpatialModel {
    let kern = JumpKernel::gaussian(3, 1.0 / (4.0 * PI)).unwrap();
    SpatialModel::new(&kern, w, &BoxGeometry::new(side, 3, 1.0).unwrap(), n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn swap_is_an_involution(n in 2usize..12, seed in any::<u64>()) {
        let w = CycleWeightModel::asymptotic(0.1, vec![(2, 0.5)]).unwrap();
        let m = model(n, 2.0, &w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = SpatialConfig::uniform_identity(&m, &mut rng).unwrap();
        for _ in 0..5 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i != j {
                c.apply_swap(i, j);
            }
        }
        let before = c.targets().to_vec();
        let (i, j) = (0, n - 1);
        c.apply_swap(i, j);
        c.apply_swap(i, j);
        prop_assert_eq!(c.targets(), before.as_slice());
        prop_assert_eq!(c.spectrum().total(), n);
    }

    #[test]
    fn swap_delta_matches_recomputation(n in 2usize..10, seed in any::<u64>()) {
        let w = CycleWeightModel::asymptotic(0.2, vec![(1, -0.3), (3, 0.8)]).unwrap();
        let m = model(n, 1.7, &w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = SpatialConfig::uniform_identity(&m, &mut rng).unwrap();
        let (i, j) = (0, 1 + rng.gen_range(0..n - 1));
        let (jump, weight) = c.swap_delta(&m, i, j);
        let mut d = c.clone();
        d.apply_swap(i, j);
        prop_assert!((d.full_energy(&m) - c.full_energy(&m) - jump - weight).abs() < 1e-10);
    }
}

#[test]
fn incremental_energy_over_many_moves() {
    let w = CycleWeightModel::asymptotic(0.3, vec![(2, 1.0)]).unwrap();
    let m = model(20, 2.2, &w);
    let mut chain = SpatialChain::new(&m, 5, None).unwrap();
    for i in 0..10_000 {
        if i % 3 == 0 { chain.step_position() } else { chain.step_swap() };
    }
    assert!(chain.config().audit(&m).unwrap() < 1e-10);
}

#[test]
fn chain_is_deterministic() {
    let w = CycleWeightModel::constant(0.0).unwrap();
    let m = model(16, 2.0, &w);
    let p = ChainParams { sweeps: 400, burn_in: 100, thin: 5, seed: 77, ..ChainParams::default() };
    let a = run_chain(&m, &p).unwrap();
    let b = run_chain(&m, &p).unwrap();
    assert_eq!(a.records, b.records);
    let q = ChainParams { seed: 78, ..p };
    assert_ne!(run_chain(&m, &q).unwrap().records, a.records);
}
