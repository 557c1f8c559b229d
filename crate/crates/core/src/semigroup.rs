//! Implicit time stepping of `∂_t u = L u` on the phase grid, decay
//! curves against the certified envelope, and the Fokker–Planck evolution.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::RateCertificate;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::operators::{assemble, equilibrium_density, DiscreteOperator, OperatorKind, PhaseGrid};
use crate::sparse::{CsrMatrix, RefinedSolver};

/// Backward error accepted from each linear solve.
pub const SOLVE_TOL: f64 = 1e-10;
/// Relative increase of a norm tolerated before it counts as a
/// contraction violation.
pub const WIGGLE: f64 = 0.005;
/// Relative slack on the envelope inequality.
pub const ENVELOPE_SLACK: f64 = 0.02;
/// Negative density values below this are reported.
pub const NEGATIVITY_TOL: f64 = -1e-6;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_T_END: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

/// One-step map `y ↦ y'` for a fixed `dt`, in the coordinates of
/// [`DiscreteOperator::unitary_form`].
pub struct Propagator {
    pub dt: f64,
    pub scheme: Scheme,
    d: Vec<f64>,
    explicit: Option<CsrMatrix>,
    solver: RefinedSolver,
}

impl Propagator {
    pub fn new(op: &DiscreteOperator, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let (m, d) = op.unitary_form()?;
        let id = CsrMatrix::identity(m.nrows);
        let (theta, explicit) = match scheme {
            Scheme::ImplicitEuler => (dt, None),
            Scheme::CrankNicolson => (0.5 * dt, Some(id.axpby(1.0, &m, 0.5 * dt))),
        };
        let solver = RefinedSolver::new(id.axpby(1.0, &m, -theta), SOLVE_TOL)?;
        Ok(Propagator {
            dt,
            scheme,
            d,
            explicit,
            solver,
        })
    }

    pub fn to_scaled(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.d).map(|(a, s)| a * s).collect()
    }

    pub fn from_scaled(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.d).map(|(a, s)| a / s).collect()
    }

    /// Advances scaled coordinates by one step; returns the solve residual.
    pub fn step(&self, y: &mut Vec<f64>) -> Result<f64> {
        let rhs = match &self.explicit {
            Some(e) => e.matvec(y),
            None => std::mem::take(y),
        };
        let (next, stats) = self.solver.solve(&rhs)?;
        *y = next;
        Ok(stats.residual)
    }
}

/// States at requested times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub scheme: Scheme,
    /// Largest backward error over all solves.
    pub max_residual: f64,
}

fn step_counts(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut prev = 0usize;
    times
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if !(t >= 0.0) || (k * dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::InvalidArgument(format!("time {t} is not a multiple of dt = {dt}")));
            }
            let k = k as usize;
            if k < prev {
                return Err(Error::InvalidArgument("requested times must be increasing".into()));
            }
            prev = k;
            Ok(k)
        })
        .collect()
}

fn run(p: &Propagator, u0: &[f64], counts: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut y = p.to_scaled(u0);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    let mut out = Vec::with_capacity(counts.len());
    for &k in counts {
        while done < k {
            worst = worst.max(p.step(&mut y)?);
            done += 1;
        }
        out.push(p.from_scaled(&y));
    }
    Ok((out, worst))
}

/// `t = 0, dt, 2dt, …, t_end`.
pub fn time_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end >= 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid time controls t_end = {t_end}, dt = {dt}")));
    }
    let n = (t_end / dt).round() as usize;
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}

/// Evolves `u₀` under `op` (`L` or `L*` on observables, `L_FP` on densities)
/// and returns the state at each requested time.
pub fn evolve(op: &DiscreteOperator, u0: &[f64], times: &[f64], dt: f64, scheme: Scheme) -> Result<Trajectory> {
    if !matches!(op.kind, OperatorKind::L | OperatorKind::LStar | OperatorKind::LFp) {
        return Err(Error::InvalidArgument(format!("cannot evolve under {}", op.kind.name())));
    }
    if u0.len() != op.dim() {
        return Err(Error::Dimension(format!("u0 has {} entries, grid has {}", u0.len(), op.dim())));
    }
    if u0.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("u0 has non-finite entries".into()));
    }
    let counts = step_counts(times, dt)?;
    let p = Propagator::new(op, dt, scheme)?;
    let (states, max_residual) = run(&p, u0, &counts)?;
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        dt,
        scheme,
        max_residual,
    })
}

/// Step-halving study at a single time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    /// `‖u_dt − u_{dt/2}‖` and `‖u_{dt/2} − u_{dt/4}‖` in the scaled norm.
    pub differences: (f64, f64),
    pub observed_order: f64,
}

/// Runs `dt`, `dt/2`, `dt/4` to `t` and estimates the temporal order.
pub fn step_halving_check(op: &DiscreteOperator, u0: &[f64], t: f64, dt: f64, scheme: Scheme) -> Result<OrderCheck> {
    let mut sols = Vec::with_capacity(3);
    for k in 0..3 {
        let h = dt / f64::from(1u32 << k);
        let p = Propagator::new(op, h, scheme)?;
        let (s, _) = run(&p, u0, &step_counts(&[t], h)?)?;
        sols.push(p.to_scaled(&s[0]));
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let (e1, e2) = (diff(&sols[0], &sols[1]), diff(&sols[1], &sols[2]));
    Ok(OrderCheck {
        differences: (e1, e2),
        observed_order: (e1 / e2).log2(),
    })
}

/// Window and smoothing of the log-linear rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fit window as fractions of `t_end`.
    pub window: (f64, f64),
    /// Length of the forward running-maximum window; oscillating norms are
    /// replaced by their upper envelope over one period.
    pub period: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            window: (0.2, 1.0),
            period: 2.0 * std::f64::consts::PI,
        }
    }
}

/// Least-squares `ln y ≈ ln A − r t`; returns `(r, A)`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(t, y)| (*t, y.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::Numeric("fewer than two positive samples in fit window".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = pts.iter().map(|(a, _)| (a - mt) * (a - mt)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("degenerate fit window".into()));
    }
    let slope = sxy / sxx;
    Ok((-slope, (my - slope * mt).exp()))
}

/// Forward running maximum of `y` over `[t, t + period]`.
pub fn running_max(t: &[f64], y: &[f64], period: f64) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    let mut hi = 0;
    for i in 0..y.len() {
        hi = hi.max(i);
        while hi + 1 < t.len() && t[hi + 1] <= t[i] + period {
            hi += 1;
        }
        out[i] = y[i..=hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    out
}

fn fit_curve(times: &[f64], norms: &[f64], opts: &FitOptions) -> Result<(f64, f64)> {
    let t_end = *times.last().unwrap_or(&0.0);
    let env = running_max(times, norms, opts.period);
    let (lo, hi) = (opts.window.0 * t_end, opts.window.1 * t_end);
    let (ts, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&env)
        .filter(|(t, _)| **t >= lo - 1e-12 && **t <= hi + 1e-12)
        .map(|(t, y)| (*t, *y))
        .unzip();
    fit_exponential(&ts, &ys)
}

/// Norm decay of one observable compared with the certified envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub label: String,
    pub times: Vec<f64>,
    /// `‖T_t g − (g,1)‖`.
    pub norms: Vec<f64>,
    pub fitted_rate: f64,
    /// `A / norms[0]` for the fit `A e^{−rt}`.
    pub fitted_prefactor: f64,
    pub certificate_envelope: Vec<f64>,
    pub theta1: f64,
    pub theta2: f64,
    pub mean: f64,
    /// Largest relative increase between consecutive norms.
    pub max_wiggle: f64,
    /// `min_i (envelope_i (1 + slack) − norm_i) / envelope_i`.
    pub envelope_margin: f64,
    pub max_residual: f64,
}

impl DecayCurve {
    pub fn contraction_holds(&self) -> bool {
        self.max_wiggle <= WIGGLE
    }

    pub fn envelope_holds(&self) -> bool {
        self.envelope_margin >= 0.0
    }

    /// The certified rate is a lower bound for the fitted one.
    pub fn rate_bound_holds(&self) -> bool {
        self.fitted_rate >= self.theta2 * (1.0 - ENVELOPE_SLACK)
    }

    pub fn passed(&self) -> bool {
        self.contraction_holds() && self.envelope_holds() && self.rate_bound_holds()
    }

    pub const CSV_HEADER: [&'static str; 4] = ["t", "norm", "envelope", "residual"];

    /// Rows `(t, norm, envelope, ln norm − ln fit)`.
    pub fn csv_rows(&self) -> Vec<[f64; 4]> {
        let a = self.fitted_prefactor * self.norms[0];
        self.times
            .iter()
            .zip(&self.norms)
            .zip(&self.certificate_envelope)
            .map(|((t, n), e)| [*t, *n, *e, n.ln() - (a.ln() - self.fitted_rate * t)])
            .collect()
    }
}

fn max_wiggle(norms: &[f64]) -> f64 {
    norms
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else { 0.0 })
        .fold(0.0, f64::max)
}

fn finish_curve(
    label: String,
    times: Vec<f64>,
    norms: Vec<f64>,
    mean: f64,
    cert: &RateCertificate,
    fit: &FitOptions,
    max_residual: f64,
) -> Result<DecayCurve> {
    let n0 = norms[0];
    let envelope: Vec<f64> = times.iter().map(|t| cert.envelope(*t, n0)).collect();
    let envelope_margin = norms
        .iter()
        .zip(&envelope)
        .map(|(n, e)| (e * (1.0 + ENVELOPE_SLACK) - n) / e)
        .fold(f64::INFINITY, f64::min);
    let (rate, a) = fit_curve(&times, &norms, fit)?;
    Ok(DecayCurve {
        label,
        max_wiggle: max_wiggle(&norms),
        times,
        norms,
        fitted_rate: rate,
        fitted_prefactor: a / n0,
        certificate_envelope: envelope,
        theta1: cert.theta1,
        theta2: cert.theta2,
        mean,
        envelope_margin,
        max_residual,
    })
}

fn check_nonconstant(grid: &PhaseGrid, g: &[f64]) -> Result<f64> {
    let mean = grid.mean(g);
    let c = grid.centered(g);
    let scale = grid.norm(g).max(1.0);
    if grid.norm(&c) <= 1e-10 * scale {
        return Err(Error::InvalidArgument("observable is constant μ-almost everywhere".into()));
    }
    Ok(mean)
}

/// Evolves `g` under `L` or `L*` to `t_end` and records `‖T_t g − (g,1)‖`
/// at every step.
pub fn decay_curve(
    op: &DiscreteOperator,
    grid: &PhaseGrid,
    label: &str,
    g: &[f64],
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    cert: &RateCertificate,
    fit: &FitOptions,
) -> Result<DecayCurve> {
    Ok(decay_curves(op, grid, &[(label.to_string(), g.to_vec())], t_end, dt, scheme, cert, fit)?
        .pop()
        .expect("one curve"))
}

/// [`decay_curve`] for several observables in parallel, sharing one
/// factorization.
pub fn decay_curves(
    op: &DiscreteOperator,
    grid: &PhaseGrid,
    observables: &[(String, Vec<f64>)],
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    cert: &RateCertificate,
    fit: &FitOptions,
) -> Result<Vec<DecayCurve>> {
    if !matches!(op.kind, OperatorKind::L | OperatorKind::LStar) {
        return Err(Error::InvalidArgument("decay curves need L or L_star".into()));
    }
    let means = observables
        .iter()
        .map(|(_, g)| {
            if g.len() != grid.len() {
                return Err(Error::Dimension(format!("observable has {} entries, grid has {}", g.len(), grid.len())));
            }
            check_nonconstant(grid, g)
        })
        .collect::<Result<Vec<f64>>>()?;
    let times = time_grid(t_end, dt)?;
    let counts = step_counts(&times, dt)?;
    let p = Propagator::new(op, dt, scheme)?;
    observables
        .par_iter()
        .zip(means.par_iter())
        .map(|((label, g), mean)| {
            let (states, res) = run(&p, g, &counts)?;
            let norms: Vec<f64> = states
                .iter()
                .map(|u| grid.norm(&u.iter().map(|x| x - mean).collect::<Vec<_>>()))
                .collect();
            finish_curve(label.clone(), times.clone(), norms, *mean, cert, fit, res)
        })
        .collect()
}

/// Density evolution under `L_FP` with stationarity diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FokkerPlanckRun {
    /// `‖u(t) − ρ (u,ρ)_H̃‖_H̃` against the certified envelope.
    pub curve: DecayCurve,
    /// `∫ u(t) dx dv` per recorded time.
    pub mass: Vec<f64>,
    pub max_mass_drift: f64,
    pub min_density: f64,
    pub warnings: Vec<String>,
    pub final_density: Vec<f64>,
}

impl FokkerPlanckRun {
    pub fn mass_conserved(&self) -> bool {
        self.max_mass_drift <= 1e-8
    }
}

/// `‖f‖_H̃ = ‖f/ρ̂‖_μ`.
pub fn h_tilde_norm(grid: &PhaseGrid, f: &[f64]) -> f64 {
    let r = equilibrium_density(grid);
    grid.norm(&f.iter().zip(&r).map(|(a, b)| a / b).collect::<Vec<_>>())
}

/// Evolves a unit-mass density `rho0` under the Fokker–Planck operator.
pub fn evolve_fokker_planck(
    grid: &PhaseGrid,
    rho0: &[f64],
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    cert: &RateCertificate,
    fit: &FitOptions,
) -> Result<FokkerPlanckRun> {
    if rho0.len() != grid.len() {
        return Err(Error::Dimension(format!("rho0 has {} entries, grid has {}", rho0.len(), grid.len())));
    }
    if rho0.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidArgument("rho0 must be finite and nonnegative".into()));
    }
    let cell = grid.hx * grid.hv;
    let mass_of = |u: &[f64]| crate::operators::pairwise_sum(u) * cell;
    let m0 = mass_of(rho0);
    if (m0 - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("rho0 has mass {m0}, expected 1")));
    }
    let op = assemble(grid, OperatorKind::LFp)?;
    let r = equilibrium_density(grid);
    let times = time_grid(t_end, dt)?;
    let p = Propagator::new(&op, dt, scheme)?;
    let mut y = p.to_scaled(rho0);
    let mut states_mass = Vec::with_capacity(times.len());
    let mut norms = Vec::with_capacity(times.len());
    let mut min_density = f64::INFINITY;
    let mut worst: f64 = 0.0;
    let mut u = rho0.to_vec();
    for k in 0..times.len() {
        if k > 0 {
            worst = worst.max(p.step(&mut y)?);
            u = p.from_scaled(&y);
        }
        let m = mass_of(&u);
        let dev: Vec<f64> = u.iter().zip(&r).map(|(a, b)| a - b * m).collect();
        norms.push(h_tilde_norm(grid, &dev));
        min_density = u.iter().cloned().fold(min_density, f64::min);
        states_mass.push(m);
    }
    let mut warnings = Vec::new();
    if min_density < NEGATIVITY_TOL {
        warnings.push(format!("density undershoot {min_density:.3e} below {NEGATIVITY_TOL:e}"));
    }
    let max_mass_drift = states_mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    if max_mass_drift > 1e-8 {
        warnings.push(format!("mass drift {max_mass_drift:.3e}"));
    }
    let curve = if norms[0] > 1e-12 {
        finish_curve("fokker-planck".into(), times, norms, m0, cert, fit, worst)?
    } else {
        // stationary start: nothing to fit
        let env = vec![0.0; times.len()];
        DecayCurve {
            label: "fokker-planck".into(),
            max_wiggle: max_wiggle(&norms),
            envelope_margin: if norms.iter().all(|n| *n <= 1e-8) { 0.0 } else { -1.0 },
            times,
            norms,
            fitted_rate: f64::INFINITY,
            fitted_prefactor: 0.0,
            certificate_envelope: env,
            theta1: cert.theta1,
            theta2: cert.theta2,
            mean: m0,
            max_residual: worst,
        }
    };
    Ok(FokkerPlanckRun {
        curve,
        mass: states_mass,
        max_mass_drift,
        min_density,
        warnings,
        final_density: u,
    })
}

/// Exact decay for linear models: constant `Σ` and `Φ = xᵀHx/2`, where
/// `T_t(c·z) = (e^{tBᵀ}c)·z` with `z = (x, v)` and
/// `B = [[0, I], [−H, −Σ]]`.
#[derive(Debug, Clone)]
pub struct OuOracle {
    pub drift: DMatrix<f64>,
    /// `L²(μ)` Gram matrix of the coordinates `z`.
    pub gram: DMatrix<f64>,
}

impl OuOracle {
    /// Requires a constant diffusion and a quadratic potential; the
    /// constant Hessian is read off at the origin.
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        let d = model.dim;
        let zero = vec![0.0; d];
        let sigma = model.diffusion.eval(&zero)?;
        let probe: Vec<f64> = (0..d).map(|i| 0.7 + 0.3 * i as f64).collect();
        if (model.diffusion.eval(&probe)? - &sigma).norm() > 1e-12 {
            return Err(Error::InvalidArgument(format!("model '{}' has non-constant Σ", model.name)));
        }
        let h = model.potential.hess(&zero);
        if (model.potential.hess(&probe) - &h).norm() > 1e-9 {
            return Err(Error::InvalidArgument(format!("model '{}' has a non-quadratic potential", model.name)));
        }
        let mut b = DMatrix::zeros(2 * d, 2 * d);
        let mut gram = DMatrix::zeros(2 * d, 2 * d);
        let hinv = h
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular Hessian".into()))?;
        for i in 0..d {
            b[(i, d + i)] = 1.0;
            gram[(d + i, d + i)] = 1.0;
            for j in 0..d {
                b[(d + i, j)] = -h[(i, j)];
                b[(d + i, d + j)] = -sigma[(i, j)];
                gram[(i, j)] = hinv[(i, j)];
            }
        }
        Ok(OuOracle { drift: b, gram })
    }

    /// Smallest real part among the eigenvalues of `−B`.
    pub fn gap(&self) -> f64 {
        (-&self.drift)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    /// `‖T_t(c·z)‖_μ` at each time.
    pub fn norms(&self, c: &[f64], times: &[f64]) -> Vec<f64> {
        let c = nalgebra::DVector::from_column_slice(c);
        let bt = self.drift.transpose();
        times
            .iter()
            .map(|t| {
                let ct = (&bt * *t).exp() * &c;
                (ct.transpose() * &self.gram * &ct)[(0, 0)].max(0.0).sqrt()
            })
            .collect()
    }

    /// Decay curve of the linear observable `c·z`.
    pub fn decay_curve(&self, label: &str, c: &[f64], t_end: f64, dt: f64, cert: &RateCertificate, fit: &FitOptions) -> Result<DecayCurve> {
        if c.len() != self.drift.nrows() || c.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidArgument("coefficient vector must be nonzero with length 2d".into()));
        }
        let times = time_grid(t_end, dt)?;
        let norms = self.norms(c, &times);
        finish_curve(label.to_string(), times, norms, 0.0, cert, fit, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::certify;
    use crate::model::builtin;
    use crate::operators::build_grid;
    use std::collections::BTreeMap;

    fn model(name: &str) -> ModelSpec {
        builtin(name, &BTreeMap::new()).unwrap()
    }

    fn cert() -> RateCertificate {
        certify(1.0, 1.0, 1.0, 0.0, 1, 2.0).unwrap()
    }

    fn classic(n: usize) -> PhaseGrid {
        build_grid(&model("classic"), n, n, None).unwrap()
    }

    #[test]
    fn constants_are_stationary() {
        let g = classic(48);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let times = [0.0, 1.0, 5.0];
        for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
            let tr = evolve(&l, &vec![1.0; g.len()], &times, 0.05, scheme).unwrap();
            for s in &tr.states {
                assert!(s.iter().all(|u| (u - 1.0).abs() < 1e-8));
            }
        }
    }

    #[test]
    fn mean_is_conserved() {
        let g = classic(48);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let u0 = g.sample(|x, v| (x - 0.3).sin() + v * v * x);
        let m0 = g.mean(&u0);
        let tr = evolve(&l, &u0, &[0.5, 2.0, 4.0], 0.05, Scheme::CrankNicolson).unwrap();
        for s in &tr.states {
            assert!((g.mean(s) - m0).abs() < 1e-8);
        }
    }

    #[test]
    fn classic_position_rate() {
        let g = classic(64);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let c = decay_curve(&l, &g, "x", &g.sample(|x, _| x), 10.0, 0.01, Scheme::CrankNicolson, &cert(), &FitOptions::default())
            .unwrap();
        assert!((c.fitted_rate - 0.5).abs() < 0.05, "{}", c.fitted_rate);
        assert!(c.passed(), "{c:?}");
    }

    #[test]
    fn matches_ou_oracle() {
        let g = classic(96);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let o = OuOracle::from_model(&model("classic")).unwrap();
        let tr = evolve(&l, &g.sample(|_, v| v), &[1.0, 3.0], 0.005, Scheme::CrankNicolson).unwrap();
        let exact = o.norms(&[0.0, 1.0], &[1.0, 3.0]);
        for (s, e) in tr.states.iter().zip(&exact) {
            assert!((g.norm(s) - e).abs() < 2e-2 * e, "{} {e}", g.norm(s));
        }
        assert!((o.gap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_observable_rejected() {
        let g = classic(32);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let e = decay_curve(&l, &g, "1", &vec![1.0; g.len()], 1.0, 0.1, Scheme::CrankNicolson, &cert(), &FitOptions::default());
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn crank_nicolson_is_second_order() {
        let g = classic(32);
        let l = assemble(&g, OperatorKind::L).unwrap();
        let u0 = g.sample(|x, v| x + 0.5 * v);
        let oc = step_halving_check(&l, &u0, 1.0, 0.1, Scheme::CrankNicolson).unwrap();
        assert!((oc.observed_order - 2.0).abs() < 0.2, "{oc:?}");
        let oe = step_halving_check(&l, &u0, 1.0, 0.1, Scheme::ImplicitEuler).unwrap();
        assert!((oe.observed_order - 1.0).abs() < 0.2, "{oe:?}");
    }

    #[test]
    fn adjoint_rate_matches() {
        let g = classic(64);
        let fit = FitOptions::default();
        let x = g.sample(|x, _| x);
        let a = decay_curve(&assemble(&g, OperatorKind::L).unwrap(), &g, "x", &x, 10.0, 0.02, Scheme::CrankNicolson, &cert(), &fit)
            .unwrap();
        let b = decay_curve(&assemble(&g, OperatorKind::LStar).unwrap(), &g, "x", &x, 10.0, 0.02, Scheme::CrankNicolson, &cert(), &fit)
            .unwrap();
        assert!((a.fitted_rate - b.fitted_rate).abs() < 0.02, "{} {}", a.fitted_rate, b.fitted_rate);
    }

    #[test]
    fn stationary_density_is_fixed() {
        let g = classic(48);
        let r = equilibrium_density(&g);
        let run = evolve_fokker_planck(&g, &r, 2.0, 0.05, Scheme::CrankNicolson, &cert(), &FitOptions::default()).unwrap();
        let err = run.final_density.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        assert!(run.mass_conserved());
    }

    #[test]
    fn shifted_gaussian_relaxes() {
        let g = classic(64);
        let r = equilibrium_density(&g);
        let mut rho0 = g.sample(|x, v| (-(x - 1.0) * (x - 1.0) / 2.0 - v * v / 2.0).exp());
        let m: f64 = rho0.iter().sum::<f64>() * g.hx * g.hv;
        rho0.iter_mut().for_each(|t| *t /= m);
        let run = evolve_fokker_planck(&g, &rho0, 10.0, 0.02, Scheme::CrankNicolson, &cert(), &FitOptions::default()).unwrap();
        assert!((run.curve.fitted_rate - 0.5).abs() < 0.05, "{}", run.curve.fitted_rate);
        assert!(run.curve.envelope_holds());
        assert!(run.mass_conserved(), "{}", run.max_mass_drift);
        assert!(run.warnings.is_empty(), "{:?}", run.warnings);
        assert!(r.len() == run.final_density.len());
    }

    #[test]
    fn conjugated_evolutions_agree() {
        // evolving g under L* and multiplying by ρ matches evolving ρg under L_FP
        let mut errs = Vec::new();
        for n in [32, 64] {
            let g = classic(n);
            let r = equilibrium_density(&g);
            let obs = g.sample(|x, v| (-(x * x + v * v) / 10.0).exp());
            let a = evolve(&assemble(&g, OperatorKind::LStar).unwrap(), &obs, &[1.0], 0.05, Scheme::CrankNicolson).unwrap();
            let f0: Vec<f64> = obs.iter().zip(&r).map(|(a, b)| a * b).collect();
            let b = evolve(&assemble(&g, OperatorKind::LFp).unwrap(), &f0, &[1.0], 0.05, Scheme::CrankNicolson).unwrap();
            let d: Vec<f64> = (0..g.len()).map(|k| a.states[0][k] * r[k] - b.states[0][k]).collect();
            errs.push(h_tilde_norm(&g, &d));
        }
        assert!(errs[1] < errs[0] / 3.0 && errs[1] < 1e-2, "{errs:?}");
    }

    #[test]
    fn ou_oracle_aniso() {
        let o = OuOracle::from_model(&model("aniso-2d")).unwrap();
        let gap = o.gap();
        assert!(gap > 0.0 && gap < 1.0);
        let c = cert();
        let curve = o.decay_curve("x1", &[1.0, 0.0, 0.0, 0.0], 10.0, 0.01, &c, &FitOptions::default()).unwrap();
        assert!(curve.envelope_holds());
        assert!(curve.norms[0] == 1.0);
        assert!(OuOracle::from_model(&model("double-well")).is_err());
    }

    #[test]
    fn running_max_is_upper_envelope() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| (-t).exp() * (1.0 + 0.5 * (3.0 * t).cos())).collect();
        let m = running_max(&t, &y, 2.0);
        assert!(m.iter().zip(&y).all(|(a, b)| a >= b));
        let (r, _) = fit_exponential(&t, &t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect::<Vec<_>>()).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
    }
}
