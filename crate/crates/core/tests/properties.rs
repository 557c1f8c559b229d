use std::collections::BTreeMap;

use mlangevin_core::certificate::check_rate_condition;
use mlangevin_core::sde::read_snapshot;
use mlangevin_core::semigroup::OuOracle;
use mlangevin_core::{assemble, build_grid, builtin, certify, evolve, Ensemble, InitialState, Integrator, OperatorKind, Scheme};
use proptest::prelude::*;

fn classic(a: f64, scale: f64) -> mlangevin_core::ModelSpec {
    let params = BTreeMap::from([("a".to_string(), a), ("scale".to_string(), scale)]);
    builtin("classic", &params).unwrap()
}

/// `min Re` over the roots of `λ² + aλ + h`.
fn ou_gap(a: f64, h: f64) -> f64 {
    let disc = a * a - 4.0 * h;
    if disc < 0.0 {
        a / 2.0
    } else {
        (a - disc.sqrt()) / 2.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn certificate_invariants(
        ratio in 0.01f64..1.0,
        n in 0.05f64..10.0,
        lam in 0.05f64..10.0,
        cphi in 0.0f64..5.0,
        d in 1usize..4,
        t1 in 1.01f64..20.0,
    ) {
        // c_Σ ≤ N_Σ keeps ε below one
        let c = ratio * n;
        let cert = certify(c, n, lam, cphi, d, t1).unwrap();
        prop_assert!(cert.theta2 > 0.0);
        prop_assert!((cert.theta2 - cert.theta2_closed_form()).abs() <= 1e-12 * cert.theta2);
        prop_assert!(cert.eps > 0.0 && cert.eps_tilde > 0.0 && cert.eps_tilde < 1.0);
        prop_assert!(cert.kappa1 <= t1 * (1.0 + 1e-12));
        check_rate_condition(&cert, c, lam).unwrap();
        let twice = certify(2.0 * c, n, lam, cphi, d, t1).unwrap();
        prop_assert!((twice.theta2 - 2.0 * cert.theta2).abs() <= 1e-14 * cert.theta2);
        prop_assert!(certify(c, 1.1 * n, lam, cphi, d, t1).unwrap().theta2 < cert.theta2);
        prop_assert!(certify(c, n, lam, cphi + 0.1, d, t1).unwrap().theta2 < cert.theta2);
        prop_assert!(certify(c, n, lam, cphi, d, 1.1 * t1).unwrap().theta2 > cert.theta2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ou_gap_matches_characteristic_roots(a in 0.1f64..5.0, scale in 0.3f64..3.0) {
        let o = OuOracle::from_model(&classic(a, scale)).unwrap();
        let expected = ou_gap(a, 1.0 / (scale * scale));
        prop_assert!((o.gap() - expected).abs() <= 1e-8 * (1.0 + expected), "{} vs {}", o.gap(), expected);
    }

    #[test]
    fn ou_norms_contract(a in 0.2f64..4.0, k in 0usize..2) {
        let o = OuOracle::from_model(&classic(a, 1.0)).unwrap();
        let mut c = [0.0; 2];
        c[k] = 1.0;
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let norms = o.norms(&c, &times);
        prop_assert!((norms[0] - 1.0).abs() < 1e-12);
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_preserves_constants_and_means(a in 0.5f64..3.0, k in 1usize..4, shift in -1.0f64..1.0) {
        let grid = build_grid(&classic(a, 1.0), 24, 24, None).unwrap();
        let l = assemble(&grid, OperatorKind::L).unwrap();
        let times = [0.0, 0.5, 1.0];
        let ones = vec![1.0; grid.len()];
        let tr = evolve(&l, &ones, &times, 0.05, Scheme::CrankNicolson).unwrap();
        for s in &tr.states {
            prop_assert!(s.iter().all(|u| (u - 1.0).abs() < 1e-8));
        }
        let g = grid.sample(|x, v| (x - shift).powi(k as i32) + x * v);
        let tr = evolve(&l, &g, &times, 0.05, Scheme::ImplicitEuler).unwrap();
        let m0 = grid.mean(&g);
        for s in &tr.states {
            prop_assert!((grid.mean(s) - m0).abs() <= 1e-8 * (1.0 + m0.abs()));
        }
    }

    #[test]
    fn ensembles_reproduce_and_snapshot(n in 1usize..300, seed in any::<u64>(), steps in 1usize..20) {
        let model = classic(1.0, 1.0);
        let run = || {
            let mut e = Ensemble::new(&model, n, seed, Integrator::EulerMaruyama, &InitialState::StandardNormal).unwrap();
            e.advance(0.01, steps).unwrap();
            e
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(&a.state, &b.state);
        let mut buf = Vec::new();
        a.write_snapshot(&mut buf).unwrap();
        prop_assert_eq!(buf.len(), 32 + 16 * n);
        let snap = read_snapshot(buf.as_slice()).unwrap();
        prop_assert_eq!((snap.n_paths, snap.dim, snap.seed), (n, 1, seed));
        prop_assert_eq!(snap.state, a.state);
    }
}
