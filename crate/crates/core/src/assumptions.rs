//! Numerical extraction of the structural constants of a model and checks
//! of the hypotheses of the convergence theorem.
//!
//! Supremum-type quantities are estimated on a finite probe box; every
//! report records the box so that a certificate built from it is understood
//! as conditional on probe coverage.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionField, GrowthRegime, ModelSpec, Potential};
use crate::quadrature::gauss_hermite;

/// Axis-aligned box `[lo₁,hi₁] × … × [lo_d,hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ProbeBox {
    pub fn cube(dim: usize, radius: f64) -> Self {
        ProbeBox {
            lo: vec![-radius; dim],
            hi: vec![radius; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::Dimension("probe box bounds have mismatched length".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("probe box is degenerate".into()));
        }
        Ok(())
    }

    fn contains_unit_ball(&self) -> bool {
        self.lo.iter().all(|&l| l <= -1.0) && self.hi.iter().all(|&h| h >= 1.0)
    }
}

/// Default number of probes for supremum estimates.
pub const DEFAULT_PROBES: usize = 10_000;

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 6] = [2, 3, 5, 7, 11, 13];

/// Deterministic probe set: a tensor grid with an odd number of nodes per
/// axis (so the centre and the faces are hit) using about half the budget,
/// followed by Halton points.
pub fn probe_points(bx: &ProbeBox, n: usize) -> Vec<Vec<f64>> {
    let d = bx.dim();
    let tensor_budget = (n / 2).max(1);
    let mut m = (tensor_budget as f64).powf(1.0 / d as f64).floor() as usize;
    if m.is_multiple_of(2) {
        m = m.saturating_sub(1);
    }
    let m = m.max(3);
    let mut out = Vec::with_capacity(n.max(m.pow(d as u32)));
    let total = m.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let p: Vec<f64> = (0..d)
            .map(|k| {
                let t = (rem % m) as f64 / (m - 1) as f64;
                rem /= m;
                bx.lo[k] + t * (bx.hi[k] - bx.lo[k])
            })
            .collect();
        out.push(p);
    }
    let mut i = 1;
    while out.len() < n {
        let p: Vec<f64> = (0..d)
            .map(|k| bx.lo[k] + radical_inverse(i, PRIMES[k % PRIMES.len()]) * (bx.hi[k] - bx.lo[k]))
            .collect();
        out.push(p);
        i += 1;
    }
    out
}

fn smallest_eigen(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// Minimum over the probes of the smallest eigenvalue of `Σ(v)`.
pub fn estimate_ellipticity(field: &DiffusionField, bx: &ProbeBox, n_probes: usize) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::InvalidArgument("n_probes must be at least 1".into()));
    }
    bx.validate()?;
    let probes = probe_points(bx, n_probes);
    let vals: Vec<Result<f64>> = probes
        .par_iter()
        .map(|v| field.eval(v).map(|a| smallest_eigen(&a)))
        .collect();
    let mut best = f64::INFINITY;
    for (v, r) in probes.iter().zip(vals) {
        let lam = r?;
        if !(lam > 0.0) {
            return Err(Error::Ellipticity {
                point: v.clone(),
                pivot: 0,
                value: lam,
            });
        }
        best = best.min(lam);
    }
    Ok(best)
}

/// Output of [`extract_sigma_constants`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaConstants {
    pub m_sigma: f64,
    pub b_sigma: f64,
    pub beta: f64,
    pub m_growth: f64,
    pub regime: GrowthRegime,
    /// Smallest `bound − |∂ₖaᵢⱼ|` seen over the probes.
    pub growth_slack: f64,
}

struct SigmaScan {
    constants: SigmaConstants,
    violation: Option<(Vec<f64>, String)>,
}

fn scan_sigma(field: &DiffusionField, bx: &ProbeBox, n_probes: usize) -> Result<SigmaScan> {
    bx.validate()?;
    if !bx.contains_unit_ball() {
        return Err(Error::InvalidArgument(
            "probe box must contain the closed unit ball".into(),
        ));
    }
    let d = field.dim();
    let g = field.growth;
    if !g.regime.beta_admissible(g.beta) {
        return Err(Error::InvalidArgument(format!(
            "declared beta = {} is not admissible for regime {:?}",
            g.beta, g.regime
        )));
    }
    let probes = probe_points(bx, n_probes);
    let ball_probes: Vec<Vec<f64>> = probe_points(&ProbeBox::cube(d, 1.0), n_probes)
        .into_iter()
        .filter(|v| v.iter().map(|t| t * t).sum::<f64>() <= 1.0)
        .collect();

    struct Local {
        max_a: f64,
        slack: f64,
        worst: Option<(f64, String)>,
    }
    let per: Vec<Result<Local>> = probes
        .par_iter()
        .map(|v| {
            let a = field.eval(v)?;
            let grads = field.grad_eval(v)?;
            let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let bound = g.regime.bound(g.m, g.beta, vn);
            let mut slack = f64::INFINITY;
            let mut worst = None;
            for (k, gk) in grads.iter().enumerate() {
                for i in 0..d {
                    for j in 0..d {
                        let s = bound - gk[(i, j)].abs();
                        // tolerance covers finite-difference gradients
                        let tol = 1e-6 * bound.max(gk[(i, j)].abs()) + 1e-10;
                        if s < -tol && worst.as_ref().is_none_or(|(w, _)| s < *w) {
                            worst = Some((s, format!("|d{k} a[{i}][{j}]| = {} > {bound}", gk[(i, j)].abs())));
                        }
                        slack = slack.min(s);
                    }
                }
            }
            Ok(Local {
                max_a: a.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
                slack,
                worst,
            })
        })
        .collect();

    let mut m_sigma: f64 = 0.0;
    let mut slack = f64::INFINITY;
    let mut violation: Option<(f64, Vec<f64>, String)> = None;
    for (v, r) in probes.iter().zip(per) {
        let l = r?;
        m_sigma = m_sigma.max(l.max_a);
        slack = slack.min(l.slack);
        if let Some((s, msg)) = l.worst {
            if violation.as_ref().is_none_or(|(w, _, _)| s < *w) {
                violation = Some((s, v.clone(), msg));
            }
        }
    }

    let ball: Vec<Result<f64>> = ball_probes
        .par_iter()
        .map(|v| {
            let grads = field.grad_eval(v)?;
            let mut m: f64 = 0.0;
            for i in 0..d {
                for (j, gj) in grads.iter().enumerate() {
                    m = m.max(gj[(i, j)].abs());
                }
            }
            Ok(m)
        })
        .collect();
    let mut b_sigma: f64 = 0.0;
    for r in ball {
        b_sigma = b_sigma.max(r?);
    }

    Ok(SigmaScan {
        constants: SigmaConstants {
            m_sigma,
            b_sigma,
            beta: g.beta,
            m_growth: g.m,
            regime: g.regime,
            growth_slack: slack,
        },
        violation: violation.map(|(_, v, msg)| (v, msg)),
    })
}

/// `M_Σ`, `B_Σ` from probes and the declared `(β, M)` verified against them.
pub fn extract_sigma_constants(field: &DiffusionField, bx: &ProbeBox) -> Result<SigmaConstants> {
    extract_sigma_constants_with(field, bx, DEFAULT_PROBES)
}

pub fn extract_sigma_constants_with(
    field: &DiffusionField,
    bx: &ProbeBox,
    n_probes: usize,
) -> Result<SigmaConstants> {
    let scan = scan_sigma(field, bx, n_probes)?;
    if let Some((witness, detail)) = scan.violation {
        return Err(Error::AssumptionFailure {
            condition: regime_name(scan.constants.regime).into(),
            witness,
            detail,
        });
    }
    Ok(scan.constants)
}

fn regime_name(r: GrowthRegime) -> &'static str {
    match r {
        GrowthRegime::Sigma3 => "Sigma3",
        GrowthRegime::Sigma3Prime => "Sigma3'",
    }
}

/// `N_Σ` per growth regime:
/// `√(M_Σ² + max(B_Σ, M)²)` for `Sigma3`, `√(M_Σ² + B_Σ² + d M²)` for `Sigma3Prime`.
pub fn compute_n_sigma(m_sigma: f64, b_sigma: f64, m_growth: f64, regime: GrowthRegime, d: usize) -> f64 {
    match regime {
        GrowthRegime::Sigma3 => {
            let b = b_sigma.max(m_growth);
            (m_sigma * m_sigma + b * b).sqrt()
        }
        GrowthRegime::Sigma3Prime => {
            (m_sigma * m_sigma + b_sigma * b_sigma + d as f64 * m_growth * m_growth).sqrt()
        }
    }
}

/// Quadrature tolerance on the `L²(ν)` bound.
pub const B_BOUND_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBound {
    /// `values[i][j] = ‖∂ⱼaᵢⱼ − aᵢⱼvⱼ‖_{L²(ν)}`.
    pub values: Vec<Vec<f64>>,
    pub n_sigma: f64,
    /// `N_Σ − max values`.
    pub slack: f64,
    pub order: usize,
}

/// Tensor Gauss–Hermite evaluation of `‖∂ⱼaᵢⱼ − aᵢⱼvⱼ‖_{L²(ν)}` for all `(i, j)`.
pub fn verify_b_bound(field: &DiffusionField, n_sigma: f64, order: usize) -> Result<BBound> {
    if order < 40 {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Hermite order {order} below the minimum of 40"
        )));
    }
    let d = field.dim();
    let (x, w) = gauss_hermite(order);
    let total = order.pow(d as u32);
    let terms: Vec<Result<(f64, DMatrix<f64>)>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut weight = 1.0;
            let v: Vec<f64> = (0..d)
                .map(|_| {
                    let k = rem % order;
                    rem /= order;
                    weight *= w[k];
                    x[k]
                })
                .collect();
            let a = field.eval(&v)?;
            let g = field.grad_eval(&v)?;
            let m = DMatrix::from_fn(d, d, |i, j| {
                let t = g[j][(i, j)] - a[(i, j)] * v[j];
                t * t
            });
            Ok((weight, m))
        })
        .collect();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for r in terms {
        let (wt, m) = r?;
        acc += m * wt;
    }
    let values: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| acc[(i, j)].sqrt()).collect())
        .collect();
    let worst = values.iter().flatten().fold(0.0_f64, |m, &t| m.max(t));
    let out = BBound {
        values,
        n_sigma,
        slack: n_sigma - worst,
        order,
    };
    if out.slack < -B_BOUND_TOL {
        return Err(Error::AssumptionFailure {
            condition: "b-bound".into(),
            witness: vec![],
            detail: format!("max L2(nu) norm {worst} exceeds N_sigma = {n_sigma}"),
        });
    }
    Ok(out)
}

/// Discretization controls for the one-dimensional Poincaré eigensolve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareGrid {
    /// Mesh width of the coarse grid; a second solve at half the width is
    /// combined by Richardson extrapolation.
    pub spacing: f64,
    /// The domain is the sublevel set `Φ − min Φ ≤ level`.
    pub level: f64,
}

impl Default for PoincareGrid {
    fn default() -> Self {
        PoincareGrid {
            spacing: 0.01,
            level: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoincareMethod {
    Analytic,
    Eigensolve,
    UserSupplied,
}

/// Poincaré constant of `e^{-Φ} dx`: second eigenvalue of `f ↦ −f″ + Φ′f′`
/// with Neumann ends, finite-volume discretization on a sublevel window.
pub fn estimate_poincare(potential: &Potential, grid: &PoincareGrid) -> Result<f64> {
    if potential.dim() != 1 {
        return potential.analytic_poincare().ok_or_else(|| {
            Error::InvalidArgument(
                "Poincare constant must be supplied for dimension > 1".into(),
            )
        });
    }
    if !(grid.spacing > 0.0 && grid.level > 0.0) {
        return Err(Error::InvalidArgument("Poincare grid spacing and level must be positive".into()));
    }
    let r = potential.support_radius(grid.level, f64::INFINITY)?;
    let coarse = poincare_fv(potential, r, grid.spacing)?;
    let fine = poincare_fv(potential, r, grid.spacing / 2.0)?;
    let lam = (4.0 * fine - coarse) / 3.0;
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::Numeric(format!("non-positive Poincare gap {lam}")));
    }
    Ok(lam)
}

fn poincare_fv(potential: &Potential, r: f64, h_target: f64) -> Result<f64> {
    let n = ((2.0 * r / h_target).ceil() as usize).max(8);
    let h = 2.0 * r / n as f64;
    // cell centres; log-density relative to its minimum to avoid underflow
    let xs: Vec<f64> = (0..n).map(|i| -r + (i as f64 + 0.5) * h).collect();
    let phi: Vec<f64> = xs.iter().map(|&x| potential.eval(&[x])).collect();
    let pmin = phi.iter().cloned().fold(f64::INFINITY, f64::min);
    let rho: Vec<f64> = phi.iter().map(|p| (-(p - pmin)).exp()).collect();
    let rho_face: Vec<f64> = (0..n - 1)
        .map(|i| (-(potential.eval(&[-r + (i + 1) as f64 * h]) - pmin)).exp())
        .collect();
    // symmetric tridiagonal D^{-1/2} K D^{-1/2}
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for i in 0..n {
        let mut k = 0.0;
        if i > 0 {
            k += rho_face[i - 1];
        }
        if i + 1 < n {
            k += rho_face[i];
        }
        diag[i] = k / (h * h * rho[i]);
    }
    for i in 0..n - 1 {
        off[i] = -rho_face[i] / (h * h * (rho[i] * rho[i + 1]).sqrt());
    }
    if diag.iter().chain(&off).any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            what: "Poincare operator".into(),
            point: vec![],
        });
    }
    Ok(tridiag_eigenvalue(&diag, &off, 1))
}

/// Number of eigenvalues of the symmetric tridiagonal matrix strictly below
/// `x` (Sturm count).
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// `k`-th smallest eigenvalue (0-based) by bisection.
pub(crate) fn tridiag_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..diag.len() {
        let mut rad = 0.0;
        if i > 0 {
            rad += off[i - 1].abs();
        }
        if i < off.len() {
            rad += off[i].abs();
        }
        lo = lo.min(diag[i] - rad);
        hi = hi.max(diag[i] + rad);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFlag {
    pub condition: String,
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
    pub detail: String,
}

impl ConditionFlag {
    fn pass(condition: &str, detail: impl Into<String>) -> Self {
        ConditionFlag {
            condition: condition.into(),
            passed: true,
            witness: None,
            detail: detail.into(),
        }
    }
    fn fail(condition: &str, witness: Option<Vec<f64>>, detail: impl Into<String>) -> Self {
        ConditionFlag {
            condition: condition.into(),
            passed: false,
            witness,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialConditions {
    pub c_hess: f64,
    pub c_hess_witness: Vec<f64>,
    pub n_gradgrowth: f64,
    pub gamma: f64,
    pub min_value: f64,
    pub flags: Vec<ConditionFlag>,
}

/// `c = max |∇²Φ|/(1+|∇Φ|)` over the probes, the declared gradient growth
/// `|∇Φ| ≤ N(1+|x|^γ)` and boundedness from below.
pub fn verify_potential_conditions(potential: &Potential, bx: &ProbeBox) -> Result<PotentialConditions> {
    verify_potential_conditions_with(potential, bx, DEFAULT_PROBES)
}

pub fn verify_potential_conditions_with(
    potential: &Potential,
    bx: &ProbeBox,
    n_probes: usize,
) -> Result<PotentialConditions> {
    let pc = scan_potential(potential, bx, n_probes)?;
    if let Some(f) = pc.flags.iter().find(|f| !f.passed) {
        return Err(Error::AssumptionFailure {
            condition: f.condition.clone(),
            witness: f.witness.clone().unwrap_or_default(),
            detail: f.detail.clone(),
        });
    }
    Ok(pc)
}

fn scan_potential(potential: &Potential, bx: &ProbeBox, n_probes: usize) -> Result<PotentialConditions> {
    bx.validate()?;
    if bx.dim() != potential.dim() {
        return Err(Error::Dimension("probe box and potential dimensions differ".into()));
    }
    let (n_decl, gamma) = potential.gradient_growth();
    let probes = probe_points(bx, n_probes);
    let per: Vec<(f64, f64, f64, f64)> = probes
        .par_iter()
        .map(|x| {
            let g = potential.grad(x).norm();
            let h = potential.hess(x).norm();
            let xn = x.iter().map(|t| t * t).sum::<f64>().sqrt();
            let bound = n_decl * (1.0 + xn.powf(gamma));
            (h / (1.0 + g), g, bound, potential.eval(x))
        })
        .collect();
    let mut c_hess = 0.0_f64;
    let mut c_w = probes[0].clone();
    let mut min_value = f64::INFINITY;
    let mut worst_growth: Option<(f64, usize)> = None;
    for (idx, &(ratio, g, bound, val)) in per.iter().enumerate() {
        if !(ratio.is_finite() && val.is_finite()) {
            return Err(Error::NonFinite {
                what: "potential derivatives".into(),
                point: probes[idx].clone(),
            });
        }
        if ratio > c_hess {
            c_hess = ratio;
            c_w = probes[idx].clone();
        }
        min_value = min_value.min(val);
        let excess = g - bound;
        if excess > 1e-9 * bound.max(1.0) && worst_growth.is_none_or(|(w, _)| excess > w) {
            worst_growth = Some((excess, idx));
        }
    }
    let mut flags = vec![ConditionFlag::pass(
        "C3",
        format!("|hess| <= {c_hess:.6} (1 + |grad|) on probes"),
    )];
    flags.push(match worst_growth {
        None => ConditionFlag::pass("gradient-growth", format!("N = {n_decl}, gamma = {gamma}")),
        Some((e, i)) => ConditionFlag::fail(
            "gradient-growth",
            Some(probes[i].clone()),
            format!("|grad| exceeds N(1+|x|^gamma) by {e}"),
        ),
    });
    flags.push(ConditionFlag::pass("C1", format!("min Phi on probes = {min_value}")));
    Ok(PotentialConditions {
        c_hess,
        c_hess_witness: c_w,
        n_gradgrowth: n_decl,
        gamma,
        min_value,
        flags,
    })
}

/// Settings for [`check_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionOptions {
    pub v_box_radius: f64,
    pub x_box_radius: f64,
    pub n_probes: usize,
    pub gh_order: usize,
    pub poincare_grid: PoincareGrid,
    /// Overrides the Poincaré constant (required when `d > 1` and no
    /// closed form is known).
    pub lambda_override: Option<f64>,
}

impl Default for AssumptionOptions {
    fn default() -> Self {
        AssumptionOptions {
            v_box_radius: 10.0,
            x_box_radius: 10.0,
            n_probes: DEFAULT_PROBES,
            gh_order: 200,
            poincare_grid: PoincareGrid::default(),
            lambda_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub dim: usize,
    pub c_sigma: f64,
    pub m_sigma: f64,
    pub b_sigma: f64,
    pub n_sigma: f64,
    pub regime: GrowthRegime,
    pub beta: f64,
    pub m_growth: f64,
    pub lambda_poincare: f64,
    pub poincare_method: PoincareMethod,
    pub c_hess: f64,
    pub n_gradgrowth: f64,
    pub gamma: f64,
    pub b_bound: Vec<Vec<f64>>,
    pub b_bound_slack: f64,
    pub v_probe_box: ProbeBox,
    pub x_probe_box: ProbeBox,
    pub n_probes: usize,
    pub coverage: String,
    /// (Σ2) local Sobolev regularity is not machine-checkable.
    pub sigma2: String,
    pub flags: Vec<ConditionFlag>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.flags.iter().all(|f| f.passed)
    }
}

/// Runs every probe and check for `model`. Hypothesis violations are
/// recorded as failed flags; ellipticity failures and numerical errors
/// abort.
pub fn check_assumptions(model: &ModelSpec, opts: &AssumptionOptions) -> Result<AssumptionReport> {
    let d = model.dim;
    let vbox = ProbeBox::cube(d, opts.v_box_radius);
    let xbox = ProbeBox::cube(d, opts.x_box_radius);
    let field = &model.diffusion;
    let mut flags = Vec::new();

    let c_sigma = estimate_ellipticity(field, &vbox, opts.n_probes)?;
    flags.push(ConditionFlag::pass("Sigma1", format!("c_sigma = {c_sigma}")));
    flags.push(ConditionFlag::pass(
        "Sigma2",
        if field.has_analytic_grad() {
            "assumed (analytic family)"
        } else {
            "assumed (not machine-checkable)"
        },
    ));

    let scan = scan_sigma(field, &vbox, opts.n_probes)?;
    let sc = scan.constants;
    let reg = regime_name(sc.regime);
    flags.push(match scan.violation {
        None => ConditionFlag::pass(reg, format!("growth slack {}", sc.growth_slack)),
        Some((w, msg)) => ConditionFlag::fail(reg, Some(w), msg),
    });
    let n_sigma = compute_n_sigma(sc.m_sigma, sc.b_sigma, sc.m_growth, sc.regime, d);

    let (bvals, bslack) = match verify_b_bound(field, n_sigma, opts.gh_order) {
        Ok(b) => {
            flags.push(ConditionFlag::pass("b-bound", format!("slack {}", b.slack)));
            (b.values, b.slack)
        }
        Err(Error::AssumptionFailure { detail, .. }) => {
            flags.push(ConditionFlag::fail("b-bound", None, detail));
            (vec![], f64::NEG_INFINITY)
        }
        Err(e) => return Err(e),
    };

    let (lambda, method) = match opts.lambda_override {
        Some(l) => (l, PoincareMethod::UserSupplied),
        None if d == 1 => (
            estimate_poincare(&model.potential, &opts.poincare_grid)?,
            PoincareMethod::Eigensolve,
        ),
        None => match model.potential.analytic_poincare() {
            Some(l) => (l, PoincareMethod::Analytic),
            None => {
                return Err(Error::InvalidArgument(
                    "Poincare constant must be supplied for dimension > 1".into(),
                ))
            }
        },
    };
    if !(lambda > 0.0) {
        return Err(Error::Numeric(format!("Poincare constant {lambda} is not positive")));
    }
    flags.push(ConditionFlag::pass("C2", format!("Lambda = {lambda} ({method:?})")));

    let pc = scan_potential(&model.potential, &xbox, opts.n_probes)?;
    flags.extend(pc.flags.iter().cloned());

    let beta = sc.beta;
    if beta > -1.0 {
        let limit = 2.0 / (1.0 + beta);
        flags.push(if pc.gamma < limit {
            ConditionFlag::pass("growth-compatibility", format!("gamma = {} < {limit}", pc.gamma))
        } else {
            ConditionFlag::fail(
                "growth-compatibility",
                None,
                format!("gamma = {} must be < 2/(1+beta) = {limit}", pc.gamma),
            )
        });
    } else {
        flags.push(ConditionFlag::pass("growth-compatibility", "beta <= -1, no restriction"));
    }

    Ok(AssumptionReport {
        model: model.name.clone(),
        dim: d,
        c_sigma,
        m_sigma: sc.m_sigma,
        b_sigma: sc.b_sigma,
        n_sigma,
        regime: sc.regime,
        beta,
        m_growth: sc.m_growth,
        lambda_poincare: lambda,
        poincare_method: method,
        c_hess: pc.c_hess,
        n_gradgrowth: pc.n_gradgrowth,
        gamma: pc.gamma,
        b_bound: bvals,
        b_bound_slack: bslack,
        v_probe_box: vbox,
        x_probe_box: xbox,
        n_probes: opts.n_probes,
        coverage: "conditional on probe coverage".into(),
        sigma2: "assumed".into(),
        flags,
    })
}
