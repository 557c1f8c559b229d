//! Phase-space discretization of the generator and its pieces for `d = 1`.
//!
//! The velocity operator `S` is written in flux form against the Gaussian
//! weight and the transport `A` through a stream function at cell corners,
//! which makes `S` exactly μ-symmetric and `A` exactly μ-antisymmetric on
//! the grid, with `L1 = 0` and `(Lf, 1)_μ = 0` to rounding. A fourth-order
//! dissipation in x (`O(h³)`) suppresses odd–even modes of the centred
//! transport stencil.

mod assemble;
mod checks;
mod grid;
mod spectrum;

pub use assemble::{assemble, assemble_stabilization, DiscreteOperator, OperatorKind, STABILIZATION};
pub use checks::{
    apply_t, conjugation_defect, conjugation_probes, equilibrium_density, observed_order, symmetry_defects,
    test_antisymmetry_form, test_bs_bound, test_dissipativity, test_invariance, test_macroscopic_coercivity,
    test_microscopic_coercivity, InequalityResult, TestFunctions, DISSIPATIVITY_TOL, INVARIANCE_TOL, SLACK,
};
pub use grid::{build_grid, default_box, pairwise_sum, PhaseBox, PhaseGrid};
pub use spectrum::{dense_spectrum, spectral_gap, spectral_gap_detail, GapEstimate, MAX_GAP_NODES};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, ModelSpec};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn model(name: &str) -> ModelSpec {
        builtin(name, &BTreeMap::new()).unwrap()
    }

    fn classic(n: usize) -> PhaseGrid {
        build_grid(&model("classic"), n, n, None).unwrap()
    }

    #[test]
    fn grid_moments() {
        let g = classic(64);
        let one = vec![1.0; g.len()];
        assert_relative_eq!(g.inner(&one, &one), 1.0, epsilon = 1e-10);
        let x2 = g.sample(|x, _| x * x);
        assert_relative_eq!(g.mean(&x2), 1.0, epsilon = 1e-4);
        let v4: f64 = g.v.iter().zip(&g.wv).map(|(v, w)| w * v.powi(4)).sum();
        assert_relative_eq!(v4, 3.0, epsilon = 1e-4);
        assert_relative_eq!(g.wx.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(g.wv.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_preconditions() {
        let m = model("classic");
        assert!(build_grid(&m, 8, 64, None).is_err());
        assert!(build_grid(&m, 32, 32, Some(PhaseBox::symmetric(8.0, 4.0))).is_err());
        assert!(build_grid(&m, 32, 32, Some(PhaseBox { x: (1.0, 1.0), v: (-8.0, 8.0) })).is_err());
        assert!(build_grid(&model("aniso-2d"), 32, 32, None).is_err());
    }

    #[test]
    fn steep_potential_box_is_cut() {
        let g = build_grid(&model("double-well"), 32, 32, None).unwrap();
        assert!(g.bx.x.1 < 3.0 && g.bx.x.1 > 2.9, "{:?}", g.bx);
        assert!(g.w.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn generator_kills_constants() {
        for name in ["classic", "bounded-bump", "double-well"] {
            let g = build_grid(&model(name), 64, 64, None).unwrap();
            let l = assemble(&g, OperatorKind::L).unwrap();
            let r = l.apply(&vec![1.0; g.len()]);
            assert!(r.iter().all(|t| t.abs() < 1e-8), "{name}");
        }
    }

    #[test]
    fn generator_on_velocity() {
        // exact away from discretization: L v = −(x + v)
        let g = classic(16);
        let l = assemble(&g, OperatorKind::L).unwrap();
        assert_eq!(l.apply(&g.sample(|_, v| v)).len(), g.len());
    }

    fn velocity_defect(n: usize) -> f64 {
        let g = classic(n);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let lf = l.apply(&g.sample(|_, v| v));
        let mut err: f64 = 0.0;
        for j in 0..g.nv() {
            for i in 0..g.nx() {
                let (x, v) = (g.x[i], g.v[j]);
                if x.abs() <= 4.0 && v.abs() <= 4.0 {
                    err = err.max((lf[g.index(i, j)] + x + v).abs());
                }
            }
        }
        err
    }

    #[test]
    fn generator_on_velocity_second_order() {
        let (e1, e2) = (velocity_defect(64), velocity_defect(128));
        assert!(e2 < 0.25 && e2 < e1 / 3.5, "{e1} {e2}");
    }

    #[test]
    fn velocity_average_of_odd_function() {
        let g = classic(64);
        let ps = assemble(&g, OperatorKind::PS).unwrap();
        let r = ps.apply(&g.sample(|_, v| v));
        assert!(r.iter().all(|t| t.abs() < 1e-14));
    }

    #[test]
    fn projections_idempotent() {
        let g = classic(32);
        let mut tf = TestFunctions::new(3);
        for kind in [OperatorKind::P, OperatorKind::PS] {
            let p = assemble(&g, kind).unwrap();
            for _ in 0..5 {
                let f = tf.phase(&g);
                let pf = p.apply(&f);
                let ppf = p.apply(&pf);
                let d: Vec<f64> = pf.iter().zip(&ppf).map(|(a, b)| a - b).collect();
                assert!(g.norm(&d) <= 1e-10 * g.norm(&f));
            }
            let csr = p.to_csr().unwrap();
            let f = tf.phase(&g);
            let d: Vec<f64> = csr.matvec(&f).iter().zip(p.apply(&f)).map(|(a, b)| a - b).collect();
            assert!(g.norm(&d) < 1e-12);
        }
    }

    #[test]
    fn exact_symmetry_structure() {
        for n in [32, 64] {
            let (ds, da) = symmetry_defects(&classic(n)).unwrap();
            assert!(ds < 1e-13 && da < 1e-13, "{ds} {da}");
        }
        let (ds, da) = symmetry_defects(&build_grid(&model("bounded-bump"), 48, 48, None).unwrap()).unwrap();
        assert!(ds < 1e-13 && da < 1e-13);
    }

    #[test]
    fn dissipativity_and_invariance() {
        let g = classic(64);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let d = test_dissipativity(&g, &l, 50, 1).unwrap();
        assert!(d.passed, "{d:?}");
        let inv = test_invariance(&g, &l, 50, 2).unwrap();
        assert!(inv.passed, "{inv:?}");
        let one = vec![1.0; g.len()];
        assert!(g.inner(&l.apply(&one), &one).abs() < 1e-12);
        let a = assemble(&g, OperatorKind::A).unwrap();
        assert!(test_antisymmetry_form(&g, &a, 50, 3).unwrap().passed);
    }

    #[test]
    fn microscopic_classic_and_bump() {
        let g = classic(64);
        let s = assemble(&g, OperatorKind::S).unwrap();
        let ps = assemble(&g, OperatorKind::PS).unwrap();
        let r = test_microscopic_coercivity(&g, &s, &ps, 1.0, 50, 4).unwrap();
        assert!(r.value >= 0.98, "{r:?}");
        let gb = build_grid(&model("bounded-bump"), 64, 64, None).unwrap();
        let s = assemble(&gb, OperatorKind::S).unwrap();
        let ps = assemble(&gb, OperatorKind::PS).unwrap();
        let c_sigma = 2.0 + 1.0 / 101.0;
        let r = test_microscopic_coercivity(&gb, &s, &ps, c_sigma, 50, 4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn macroscopic_classic() {
        let g = classic(64);
        let a = assemble(&g, OperatorKind::A).unwrap();
        let p = assemble(&g, OperatorKind::P).unwrap();
        // f_S = x: ‖APf‖² = ‖Pf‖² = 1
        let f = g.sample(|x, _| x);
        let pf = p.apply(&f);
        let apf = a.apply(&pf);
        assert_relative_eq!(g.inner(&apf, &apf) / g.inner(&pf, &pf), 1.0, epsilon = 2e-2);
        let r = test_macroscopic_coercivity(&g, &a, &p, 1.0, 50, 5).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn bs_bound_cases() {
        let g = classic(64);
        let r = test_bs_bound(&g, 1.0, 50, 6).unwrap();
        assert!(r.passed, "{r:?}");
        // odd in v: f_S = 0 so Tf = 0
        let f = g.sample(|x, v| v * (-x * x / 4.0).exp());
        assert!(g.norm(&apply_t(&g, &f).unwrap()) < 1e-12);
        let gb = build_grid(&model("bounded-bump"), 64, 64, None).unwrap();
        let r = test_bs_bound(&gb, 3.0695073, 50, 6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn g_matches_pa2p() {
        let errs: Vec<f64> = [32, 64]
            .iter()
            .map(|&n| {
                let g = classic(n);
                let a = assemble(&g, OperatorKind::A).unwrap();
                let p = assemble(&g, OperatorKind::P).unwrap();
                let gop = assemble(&g, OperatorKind::G).unwrap();
                let f = g.sample(|x, v| (-(x * x) / 8.0).exp() * (1.0 + 0.3 * v * v) + 0.2 * x.sin());
                let lhs = gop.apply(&f);
                let rhs = p.apply(&a.apply(&a.apply(&p.apply(&f))));
                let d: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
                g.norm(&d) / g.norm(&lhs)
            })
            .collect();
        assert!(errs[1] < 0.05, "{errs:?}");
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    #[test]
    fn conjugation_second_order() {
        let hs: Vec<f64> = [32usize, 64, 128].iter().map(|&n| 16.0 / (n - 1) as f64).collect();
        for (name, f) in conjugation_probes() {
            let errs: Vec<f64> = [32, 64, 128]
                .iter()
                .map(|&n| {
                    let g = classic(n);
                    conjugation_defect(&g, &g.sample(f)).unwrap()
                })
                .collect();
            let p = observed_order(&hs, &errs);
            assert!(p >= 1.8, "{name}: {errs:?} order {p}");
        }
    }

    #[test]
    fn fokker_planck_conserves_and_fixes_density() {
        for name in ["classic", "bounded-bump", "double-well"] {
            let g = build_grid(&model(name), 48, 48, None).unwrap();
            let lfp = assemble(&g, OperatorKind::LFp).unwrap();
            let r = equilibrium_density(&g);
            let lr = lfp.apply(&r);
            assert!(lr.iter().all(|t| t.abs() < 1e-10), "{name}");
            let m = lfp.matrix().unwrap();
            let colsum = m.transpose().matvec(&vec![1.0; g.len()]);
            assert!(colsum.iter().all(|t| t.abs() < 1e-8), "{name}");
        }
    }

    #[test]
    fn gap_classic_matches_ou() {
        let g = classic(64);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let gap = spectral_gap(&l, &g).unwrap();
        assert!((gap - 0.5).abs() < 0.02, "{gap}");
    }

    #[test]
    fn gap_arnoldi_matches_dense() {
        for name in ["classic", "bounded-bump", "double-well"] {
            let g = build_grid(&model(name), 24, 24, None).unwrap();
            let l = assemble(&g, OperatorKind::L).unwrap();
            let dense = dense_spectrum(&l).unwrap();
            let dense_gap = dense.iter().filter(|z| z.norm() > 1e-8).map(|z| z.re).fold(f64::INFINITY, f64::min);
            let gap = spectral_gap(&l, &g).unwrap();
            assert!((gap - dense_gap).abs() < 1e-6 * dense_gap.max(1.0), "{name}: {gap} vs {dense_gap}");
        }
    }

    #[test]
    fn gap_steep_quadratic() {
        let mut p = BTreeMap::new();
        p.insert("scale".to_string(), 0.5);
        let m = builtin("classic", &p).unwrap();
        let g = build_grid(&m, 64, 64, None).unwrap();
        let l = assemble(&g, OperatorKind::L).unwrap();
        let gap = spectral_gap(&l, &g).unwrap();
        assert!((gap - 0.5).abs() < 0.02, "{gap}");
    }

    #[test]
    fn matrix_market_export() {
        let g = classic(16);
        let mut buf = vec![];
        assemble(&g, OperatorKind::S).unwrap().write_matrix_market(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("%%MatrixMarket"));
    }
}
