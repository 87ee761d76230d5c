use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatperm::stats::{chi_square_gof, ks_two_sample, sample_gem, sample_pd, CycleSpectrum};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gem_fragments(theta in 0.05f64..10.0, m in 1usize..300, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_gem(theta, m, &mut rng).unwrap();
        prop_assert_eq!(p.len(), m);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(p.iter().sum::<f64>() <= 1.0 + 1e-12);
        let q = sample_pd(theta, m, &mut rng).unwrap();
        prop_assert!(q.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn spectrum_round_trip(lengths in proptest::collection::vec(1usize..30, 1..20)) {
        let s = CycleSpectrum::new(lengths.clone()).unwrap();
        prop_assert_eq!(s.total(), lengths.iter().sum::<usize>());
        prop_assert_eq!(CycleSpectrum::from_counts(&s.counts()), s.clone());
        prop_assert!((s.normalized(1.0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(s.long_fraction(0), 1.0);
    }

    #[test]
    fn ks_is_symmetric(a in proptest::collection::vec(0.0f64..1.0, 2..50), b in proptest::collection::vec(0.0f64..1.0, 2..50)) {
        let x = ks_two_sample(&a, &b).unwrap();
        let y = ks_two_sample(&b, &a).unwrap();
        prop_assert!((x.distance - y.distance).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&x.p_value));
    }
}

#[test]
fn chi_square_exact_counts() {
    let probs = [0.1, 0.2, 0.3, 0.4];
    let counts = [1000u64, 2000, 3000, 4000];
    let (stat, p, dof) = chi_square_gof(&counts, &probs);
    assert_eq!(stat, 0.0);
    assert!(p > 0.999);
    assert_eq!(dof, 3);
}
