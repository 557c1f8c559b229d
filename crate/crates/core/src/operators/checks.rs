use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::assemble::{assemble, DiscreteOperator, OperatorKind};
use super::grid::PhaseGrid;
use crate::error::{Error, Result};
use crate::model::drift_correction;

/// Relative slack of every coercivity-type inequality.
pub const SLACK: f64 = 0.02;
/// Dissipativity threshold on `(Lf, f)` for unit-norm `f`.
pub const DISSIPATIVITY_TOL: f64 = 1e-6;
/// Threshold on `|(Lf, 1)|` for unit-norm `f`.
pub const INVARIANCE_TOL: f64 = 1e-8;

/// Outcome of a sampled inequality test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityResult {
    pub name: String,
    /// Worst sampled value (min for lower bounds, max for upper bounds).
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub n_samples: usize,
}

/// Smooth bump equal to one near the centre and vanishing with all
/// derivatives at `±r`.
fn cutoff(t: f64, r: f64) -> f64 {
    let s = t / r;
    if s.abs() >= 1.0 {
        return 0.0;
    }
    let s2 = s * s;
    if s2 < 0.25 {
        return 1.0;
    }
    // transition on 0.5 ≤ |s| < 1
    let u = (s.abs() - 0.5) / 0.5;
    let g = |z: f64| if z <= 0.0 { 0.0 } else { (-1.0 / z).exp() };
    g(1.0 - u) / (g(1.0 - u) + g(u))
}

/// Normalized probabilists' Hermite polynomials `He_n/√n!` up to `n`.
fn hermite(v: f64, n: usize) -> Vec<f64> {
    let mut h = vec![1.0; n + 1];
    if n >= 1 {
        h[1] = v;
    }
    for k in 2..=n {
        h[k] = v * h[k - 1] - (k - 1) as f64 * h[k - 2];
    }
    let mut fact = 1.0;
    for (k, hk) in h.iter_mut().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        *hk /= fact.sqrt();
    }
    h
}

/// Random smooth functions on the grid: cut-off Fourier (x) × Hermite (v)
/// expansions with coefficients decaying like `1/(1+m+n)²`.
#[derive(Debug, Clone)]
pub struct TestFunctions {
    rng: ChaCha8Rng,
    pub modes_x: usize,
    pub modes_v: usize,
}

impl TestFunctions {
    pub fn new(seed: u64) -> Self {
        TestFunctions {
            rng: ChaCha8Rng::seed_from_u64(seed),
            modes_x: 6,
            modes_v: 6,
        }
    }

    fn gauss(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn x_profile(&mut self, grid: &PhaseGrid) -> Vec<Vec<f64>> {
        let (lo, hi) = grid.bx.x;
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        (0..self.modes_x)
            .map(|m| {
                let phase = if self.gauss() > 0.0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
                grid.x
                    .iter()
                    .map(|&x| {
                        let s = (x - c) / r;
                        (m as f64 * std::f64::consts::PI * s / 1.5 + phase).cos() * cutoff(x - c, 0.95 * r)
                    })
                    .collect()
            })
            .collect()
    }

    /// Random function of `(x, v)`.
    pub fn phase(&mut self, grid: &PhaseGrid) -> Vec<f64> {
        let xs = self.x_profile(grid);
        let (vlo, vhi) = grid.bx.v;
        let (vc, vr) = (0.5 * (vlo + vhi), 0.5 * (vhi - vlo));
        let vs: Vec<Vec<f64>> = grid
            .v
            .iter()
            .map(|&v| {
                let chi = cutoff(v - vc, 0.95 * vr);
                hermite(v, self.modes_v - 1).into_iter().map(|h| h * chi).collect()
            })
            .collect();
        let mut coef = vec![vec![0.0; self.modes_v]; self.modes_x];
        for (m, row) in coef.iter_mut().enumerate() {
            for (n, c) in row.iter_mut().enumerate() {
                *c = self.gauss() / ((1 + m + n) * (1 + m + n)) as f64;
            }
        }
        let mut out = vec![0.0; grid.len()];
        for j in 0..grid.nv() {
            for i in 0..grid.nx() {
                let mut s = 0.0;
                for m in 0..self.modes_x {
                    for n in 0..self.modes_v {
                        s += coef[m][n] * xs[m][i] * vs[j][n];
                    }
                }
                out[grid.index(i, j)] = s;
            }
        }
        out
    }

    /// Random function of `x` only, lifted to all nodes.
    pub fn macroscopic(&mut self, grid: &PhaseGrid) -> Vec<f64> {
        let xs = self.x_profile(grid);
        let coef: Vec<f64> = (0..self.modes_x).map(|m| self.gauss() / ((1 + m) * (1 + m)) as f64).collect();
        let g: Vec<f64> = (0..grid.nx())
            .map(|i| (0..self.modes_x).map(|m| coef[m] * xs[m][i]).sum())
            .collect();
        grid.lift_x(&g)
    }
}

fn unit(grid: &PhaseGrid, mut f: Vec<f64>) -> Vec<f64> {
    let n = grid.norm(&f);
    f.iter_mut().for_each(|t| *t /= n);
    f
}

fn expect_kind(op: &DiscreteOperator, kinds: &[OperatorKind]) -> Result<()> {
    if kinds.contains(&op.kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "operator {} not accepted here",
            op.kind.name()
        )))
    }
}

/// `max (Lf, f)_μ` over unit-norm random `f`; passes when `≤ 1e-6`.
pub fn test_dissipativity(grid: &PhaseGrid, l: &DiscreteOperator, n_random: usize, seed: u64) -> Result<InequalityResult> {
    let mut tf = TestFunctions::new(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_random {
        let f = unit(grid, tf.phase(grid));
        worst = worst.max(grid.inner(&l.apply(&f), &f));
    }
    Ok(InequalityResult {
        name: format!("dissipativity({})", l.kind.name()),
        value: worst,
        threshold: DISSIPATIVITY_TOL,
        passed: worst <= DISSIPATIVITY_TOL,
        n_samples: n_random,
    })
}

/// `max |(Lf, 1)_μ|` over unit-norm random `f`; passes when `≤ 1e-8`.
pub fn test_invariance(grid: &PhaseGrid, l: &DiscreteOperator, n_random: usize, seed: u64) -> Result<InequalityResult> {
    let mut tf = TestFunctions::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_random {
        let f = unit(grid, tf.phase(grid));
        worst = worst.max(grid.mean(&l.apply(&f)).abs());
    }
    Ok(InequalityResult {
        name: format!("invariance({})", l.kind.name()),
        value: worst,
        threshold: INVARIANCE_TOL,
        passed: worst <= INVARIANCE_TOL,
        n_samples: n_random,
    })
}

/// `max |(Af, f)_μ|` for unit-norm random `f`.
pub fn test_antisymmetry_form(grid: &PhaseGrid, a: &DiscreteOperator, n_random: usize, seed: u64) -> Result<InequalityResult> {
    expect_kind(a, &[OperatorKind::A])?;
    let mut tf = TestFunctions::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_random {
        let f = unit(grid, tf.phase(grid));
        worst = worst.max(grid.inner(&a.apply(&f), &f).abs());
    }
    Ok(InequalityResult {
        name: "antisymmetry(A)".into(),
        value: worst,
        threshold: DISSIPATIVITY_TOL,
        passed: worst <= DISSIPATIVITY_TOL,
        n_samples: n_random,
    })
}

/// `min −(Sf, f)/‖(I−P_S)f‖²`; passes when `≥ (1 − 2%)·c_Σ`.
pub fn test_microscopic_coercivity(
    grid: &PhaseGrid,
    s: &DiscreteOperator,
    ps: &DiscreteOperator,
    c_sigma: f64,
    n_random: usize,
    seed: u64,
) -> Result<InequalityResult> {
    expect_kind(s, &[OperatorKind::S])?;
    expect_kind(ps, &[OperatorKind::PS])?;
    let mut tf = TestFunctions::new(seed);
    let mut worst = f64::INFINITY;
    let mut used = 0;
    for _ in 0..n_random {
        let f = unit(grid, tf.phase(grid));
        let psf = ps.apply(&f);
        let perp: Vec<f64> = f.iter().zip(&psf).map(|(a, b)| a - b).collect();
        let den = grid.inner(&perp, &perp);
        if den < 1e-10 {
            continue;
        }
        used += 1;
        worst = worst.min(-grid.inner(&s.apply(&f), &f) / den);
    }
    let threshold = (1.0 - SLACK) * c_sigma;
    Ok(InequalityResult {
        name: "microscopic coercivity".into(),
        value: worst,
        threshold,
        passed: used > 0 && worst >= threshold,
        n_samples: used,
    })
}

/// `min ‖APf‖²/‖Pf‖²` over random `f_S`; passes when `≥ (1 − 2%)·Λ`.
pub fn test_macroscopic_coercivity(
    grid: &PhaseGrid,
    a: &DiscreteOperator,
    p: &DiscreteOperator,
    lambda: f64,
    n_random: usize,
    seed: u64,
) -> Result<InequalityResult> {
    expect_kind(a, &[OperatorKind::A])?;
    expect_kind(p, &[OperatorKind::P])?;
    let mut tf = TestFunctions::new(seed);
    let mut worst = f64::INFINITY;
    let mut used = 0;
    for _ in 0..n_random {
        let f = tf.macroscopic(grid);
        let pf = p.apply(&f);
        let den = grid.inner(&pf, &pf);
        if den < 1e-10 * grid.inner(&f, &f).max(1e-300) {
            continue;
        }
        used += 1;
        let apf = a.apply(&pf);
        worst = worst.min(grid.inner(&apf, &apf) / den);
    }
    let threshold = (1.0 - SLACK) * lambda;
    Ok(InequalityResult {
        name: "macroscopic coercivity".into(),
        value: worst,
        threshold,
        passed: used > 0 && worst >= threshold,
        n_samples: used,
    })
}

/// `∂_x` of a function of x by centred differences, second-order one-sided
/// at the ends.
fn dx(g: &[f64], h: f64) -> Vec<f64> {
    let n = g.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (g[i + 1] - g[i - 1]) / (2.0 * h);
    }
    out[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h);
    out[n - 1] = (3.0 * g[n - 1] - 4.0 * g[n - 2] + g[n - 3]) / (2.0 * h);
    out
}

/// `Tf = b(v)·∂_x(P_S f)` with `b` the drift correction.
pub fn apply_t(grid: &PhaseGrid, f: &[f64]) -> Result<Vec<f64>> {
    let fs = grid.v_average(f);
    let dfs = dx(&fs, grid.hx);
    let mut out = vec![0.0; grid.len()];
    for (j, &v) in grid.v.iter().enumerate() {
        let b = drift_correction(&grid.diffusion, &[v])?[0];
        for i in 0..grid.nx() {
            out[grid.index(i, j)] = b * dfs[i];
        }
    }
    Ok(out)
}

/// `max ‖Tf‖/‖(I−G)f‖` over random `f`; passes when
/// `≤ (1 + 2%)·√(2d³)·N_Σ`.
pub fn test_bs_bound(grid: &PhaseGrid, n_sigma: f64, n_random: usize, seed: u64) -> Result<InequalityResult> {
    let g = assemble(grid, OperatorKind::G)?;
    let mut tf = TestFunctions::new(seed);
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for _ in 0..n_random {
        let f = unit(grid, tf.phase(grid));
        let gf = g.apply(&f);
        let igf: Vec<f64> = f.iter().zip(&gf).map(|(a, b)| a - b).collect();
        let den = grid.norm(&igf);
        if den < 1e-10 {
            continue;
        }
        used += 1;
        worst = worst.max(grid.norm(&apply_t(grid, &f)?) / den);
    }
    let threshold = (1.0 + SLACK) * 2f64.sqrt() * n_sigma;
    Ok(InequalityResult {
        name: "BS bound".into(),
        value: worst,
        threshold,
        passed: used > 0 && worst <= threshold,
        n_samples: used,
    })
}

/// Relative defects `‖WS − (WS)ᵀ‖_F/‖WS‖_F` and `‖WA + (WA)ᵀ‖_F/‖WA‖_F`,
/// i.e. the departure from μ-symmetry and μ-antisymmetry.
pub fn symmetry_defects(grid: &PhaseGrid) -> Result<(f64, f64)> {
    let s = assemble(grid, OperatorKind::S)?;
    let a = assemble(grid, OperatorKind::A)?;
    let ws = s.matrix().unwrap().scale_rows(&grid.w);
    let wa = a.matrix().unwrap().scale_rows(&grid.w);
    let ds = ws.axpby(1.0, &ws.transpose(), -1.0).frobenius() / ws.frobenius();
    let da = wa.axpby(1.0, &wa.transpose(), 1.0).frobenius() / wa.frobenius();
    Ok((ds, da))
}

/// Discrete unit-mass equilibrium density `ρ̂` on the nodes.
pub fn equilibrium_density(grid: &PhaseGrid) -> Vec<f64> {
    let cell = grid.hx * grid.hv;
    grid.w.iter().map(|w| w / cell).collect()
}

/// `‖(T L* T⁻¹ − L_FP)(T g)‖_H̃` with `T` multiplication by the
/// equilibrium density.
pub fn conjugation_defect(grid: &PhaseGrid, g: &[f64]) -> Result<f64> {
    let ls = assemble(grid, OperatorKind::LStar)?;
    let lfp = assemble(grid, OperatorKind::LFp)?;
    let r = equilibrium_density(grid);
    let lsg = ls.apply(g);
    let f: Vec<f64> = g.iter().zip(&r).map(|(a, b)| a * b).collect();
    let lf = lfp.apply(&f);
    let d: Vec<f64> = (0..g.len()).map(|k| lsg[k] - lf[k] / r[k]).collect();
    Ok(grid.norm(&d))
}

/// Least-squares slope of `log err` against `log h` (the observed order).
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let lx: Vec<f64> = h.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|t| t.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub type Probe = fn(f64, f64) -> f64;

/// The smooth observables used for conjugation studies.
pub fn conjugation_probes() -> Vec<(&'static str, Probe)> {
    vec![
        ("1+xv", |x, v| 1.0 + x * v),
        ("sin(x)cos(v)", |x, v| x.sin() * v.cos()),
        ("x^2-v", |x, v| x * x - v),
        ("v^3", |_, v| v * v * v),
        ("exp(-(x^2+v^2)/10)", |x, v| (-0.1 * (x * x + v * v)).exp()),
    ]
}
