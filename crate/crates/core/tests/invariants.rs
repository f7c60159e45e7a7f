use dualadam::optim::{adam_update, blend, invadam_update, step_parallel};
use dualadam::{step, OptimizerConfig, OptimizerKind, OptimizerState, Schedule};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn opposite_monotonicity(m in 1e-6f64..10.0, v in 1e-8f64..10.0, bump in 1e-6f64..10.0) {
        let (a0, a1) = (adam_update(&[m], &[v], 1e-8)[0], adam_update(&[m], &[v + bump], 1e-8)[0]);
        let (i0, i1) = (invadam_update(&[m], &[v])[0], invadam_update(&[m], &[v + bump])[0]);
        prop_assert!(a1 < a0);
        prop_assert!(i1 > i0);
    }

    #[test]
    fn blend_stays_between(alpha in 0.0f64..=1.0, u in -10.0f64..10.0, w in -10.0f64..10.0) {
        let b = blend(alpha, u, w);
        prop_assert!(b >= u.min(w) - 1e-12 && b <= u.max(w) + 1e-12);
    }

    #[test]
    fn state_invariants(grads in prop::collection::vec(finite_vec(5), 1..40), kind in 0usize..4) {
        let cfg = OptimizerConfig::new(OptimizerKind::ALL[kind], 1e-3);
        let mut st = OptimizerState::new(5);
        let mut theta = vec![0.5; 5];
        for (k, g) in grads.iter().enumerate() {
            let r = step(&mut st, &mut theta, g, &cfg, 0).unwrap();
            prop_assert_eq!(st.t(), k as u64 + 1);
            prop_assert_eq!(st.m().len(), 5);
            prop_assert!(st.v().iter().all(|&v| v >= 0.0));
            prop_assert!((0.0..=1.0).contains(&r.alpha));
            let bound = r.alpha * r.inv_part_norm + (1.0 - r.alpha) * r.adam_part_norm;
            prop_assert!(r.update_norm <= bound * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn exponential_alpha_never_increases(base in 0.01f64..=1.0, t in 1u64..10_000) {
        let s = Schedule::Exponential { base };
        prop_assert!(s.alpha_at(t + 1, 0) <= s.alpha_at(t, 0));
    }

    #[test]
    fn sharded_steps_match_serial(seed in 0u64..1000, p in 1usize..20_000) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let cfg = OptimizerConfig::new(OptimizerKind::DualAdam, 1e-2);
        let (mut a, mut b) = (vec![0.1; p], vec![0.1; p]);
        let (mut sa, mut sb) = (OptimizerState::new(p), OptimizerState::new(p));
        for _ in 0..3 {
            step(&mut sa, &mut a, &g, &cfg, 0).unwrap();
            step_parallel(&mut sb, &mut b, &g, &cfg, 0).unwrap();
        }
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
