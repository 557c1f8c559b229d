//! Problem instances: velocity-dependent diffusion fields, confining
//! potentials and the drift correction `b(v)` that keeps the Gaussian
//! velocity law invariant.
//!
//! Every field and potential is immutable after construction and can be
//! shared across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

/// Growth regime of the coefficient derivatives.
///
/// `Sigma3`: `|∂ₖaᵢⱼ(v)| ≤ M (1+|v|)^β` with `β ≤ 0`.
/// `Sigma3Prime`: `|∂ₖaᵢⱼ(v)| ≤ M (1_{B₁}(v) + |v|^β)` with `0 < β < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthRegime {
    Sigma3,
    Sigma3Prime,
}

impl GrowthRegime {
    /// Right-hand side of the declared derivative bound at `v`.
    pub fn bound(self, m: f64, beta: f64, v_norm: f64) -> f64 {
        match self {
            GrowthRegime::Sigma3 => m * (1.0 + v_norm).powf(beta),
            GrowthRegime::Sigma3Prime => {
                let ind = if v_norm < 1.0 { 1.0 } else { 0.0 };
                m * (ind + v_norm.powf(beta))
            }
        }
    }

    pub fn beta_admissible(self, beta: f64) -> bool {
        match self {
            GrowthRegime::Sigma3 => beta <= 0.0,
            GrowthRegime::Sigma3Prime => beta > 0.0 && beta < 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredGrowth {
    pub beta: f64,
    pub m: f64,
    pub regime: GrowthRegime,
}

/// A symmetric coefficient matrix field `v ↦ Σ(v)`.
///
/// Implementors supply `eval`; `grad` is optional and returns the list
/// `[∂₁Σ, …, ∂_dΣ]` when an analytic derivative is known.
pub trait CoefficientField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, v: &[f64]) -> DMatrix<f64>;
    fn grad(&self, _v: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// `(a(v), a′(v))` without allocation, for one-dimensional fields.
    fn scalar(&self, _v: f64) -> Option<(f64, f64)> {
        None
    }
    fn label(&self) -> String;
}

/// Constant diffusion matrix.
#[derive(Debug, Clone)]
pub struct ConstantDiffusion {
    pub matrix: DMatrix<f64>,
}

impl CoefficientField for ConstantDiffusion {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, _v: &[f64]) -> DMatrix<f64> {
        self.matrix.clone()
    }
    fn grad(&self, _v: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let d = self.dim();
        Some(vec![DMatrix::zeros(d, d); d])
    }
    fn scalar(&self, _v: f64) -> Option<(f64, f64)> {
        (self.dim() == 1).then(|| (self.matrix[(0, 0)], 0.0))
    }
    fn label(&self) -> String {
        format!("constant{:?}", self.matrix.as_slice())
    }
}

/// Isotropic bump `Σ(v) = (base + amp/(1+|v|²)) I`.
#[derive(Debug, Clone, Copy)]
pub struct BumpDiffusion {
    pub dim: usize,
    pub base: f64,
    pub amp: f64,
}

impl CoefficientField for BumpDiffusion {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, v: &[f64]) -> DMatrix<f64> {
        let r2: f64 = v.iter().map(|x| x * x).sum();
        DMatrix::identity(self.dim, self.dim) * (self.base + self.amp / (1.0 + r2))
    }
    fn grad(&self, v: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let r2: f64 = v.iter().map(|x| x * x).sum();
        let den = (1.0 + r2) * (1.0 + r2);
        Some(
            v.iter()
                .map(|&vk| DMatrix::identity(self.dim, self.dim) * (-2.0 * self.amp * vk / den))
                .collect(),
        )
    }
    fn scalar(&self, v: f64) -> Option<(f64, f64)> {
        let q = 1.0 + v * v;
        (self.dim == 1).then(|| (self.base + self.amp / q, -2.0 * self.amp * v / (q * q)))
    }
    fn label(&self) -> String {
        format!("bump(base={}, amp={})", self.base, self.amp)
    }
}

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Black-box field without analytic derivatives; gradients fall back to
/// central finite differences.
#[derive(Clone)]
pub struct FnDiffusion {
    pub dim: usize,
    pub label: String,
    pub f: Arc<MatrixFn>,
}

impl fmt::Debug for FnDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDiffusion")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl CoefficientField for FnDiffusion {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, v: &[f64]) -> DMatrix<f64> {
        (self.f)(v)
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Finite-difference step used for every derivative fallback.
pub fn fd_step(x: &[f64]) -> f64 {
    let n: f64 = x.iter().map(|t| t * t).sum::<f64>().sqrt();
    1e-5 * (1.0 + n)
}

/// Diffusion coefficient field together with its declared derivative growth.
#[derive(Debug, Clone)]
pub struct DiffusionField {
    field: Arc<dyn CoefficientField>,
    pub growth: DeclaredGrowth,
}

impl DiffusionField {
    pub fn new(field: Arc<dyn CoefficientField>, growth: DeclaredGrowth) -> Self {
        DiffusionField { field, growth }
    }

    pub fn constant(matrix: DMatrix<f64>) -> Self {
        DiffusionField::new(
            Arc::new(ConstantDiffusion { matrix }),
            DeclaredGrowth {
                beta: -1.0,
                m: 0.0,
                regime: GrowthRegime::Sigma3,
            },
        )
    }

    pub fn scalar(a: f64) -> Self {
        DiffusionField::constant(DMatrix::from_element(1, 1, a))
    }

    /// `Σ(v) = (base + amp/(1+|v|²)) I`; the derivative bound
    /// `|∂ₖa| ≤ 9·amp/(8√3)` is declared in the `Sigma3` regime with β = 0.
    pub fn bump(dim: usize, base: f64, amp: f64) -> Self {
        DiffusionField::new(
            Arc::new(BumpDiffusion { dim, base, amp }),
            DeclaredGrowth {
                beta: 0.0,
                m: amp.abs() * 9.0 / (8.0 * 3f64.sqrt()),
                regime: GrowthRegime::Sigma3,
            },
        )
    }

    pub fn from_fn<F>(dim: usize, label: &str, growth: DeclaredGrowth, f: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        DiffusionField::new(
            Arc::new(FnDiffusion {
                dim,
                label: label.to_string(),
                f: Arc::new(f),
            }),
            growth,
        )
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn label(&self) -> String {
        self.field.label()
    }

    pub fn has_analytic_grad(&self) -> bool {
        let z = vec![0.0; self.dim()];
        self.field.grad(&z).is_some()
    }

    /// Raw evaluation, no checks.
    pub fn eval_raw(&self, v: &[f64]) -> DMatrix<f64> {
        self.field.eval(v)
    }

    /// Evaluates `Σ(v)`, rejecting non-finite entries and asymmetry beyond
    /// 1e-12 relative.
    pub fn eval(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.field.eval(v);
        let d = self.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::Dimension(format!(
                "field returned {}x{} matrix, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..d {
            for j in 0..d {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("a[{i}][{j}]"),
                        point: v.to_vec(),
                    });
                }
            }
        }
        let scale = m.norm().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).norm() > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "diffusion matrix not symmetric at v = {v:?}"
            )));
        }
        Ok(m)
    }

    /// `[∂₁Σ, …, ∂_dΣ]` at `v`, analytic when available.
    pub fn grad_eval(&self, v: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let g = match self.field.grad(v) {
            Some(g) => g,
            None => self.fd_grad(v),
        };
        for (k, gk) in g.iter().enumerate() {
            for (idx, x) in gk.iter().enumerate() {
                if !x.is_finite() {
                    let d = self.dim();
                    return Err(Error::NonFinite {
                        what: format!("d{k} a[{}][{}]", idx % d, idx / d),
                        point: v.to_vec(),
                    });
                }
            }
        }
        Ok(g)
    }

    /// `(a(v), a′(v))` for one-dimensional fields.
    pub fn scalar_eval(&self, v: f64) -> (f64, f64) {
        match self.field.scalar(v) {
            Some(p) => p,
            None => {
                let a = self.field.eval(&[v])[(0, 0)];
                let g = self.field.grad(&[v]).unwrap_or_else(|| self.fd_grad(&[v]));
                (a, g[0][(0, 0)])
            }
        }
    }

    /// Central finite-difference gradient, ignoring any analytic form.
    pub fn fd_grad(&self, v: &[f64]) -> Vec<DMatrix<f64>> {
        let h = fd_step(v);
        let mut p = v.to_vec();
        (0..self.dim())
            .map(|k| {
                p[k] = v[k] + h;
                let up = self.field.eval(&p);
                p[k] = v[k] - h;
                let dn = self.field.eval(&p);
                p[k] = v[k];
                (up - dn) / (2.0 * h)
            })
            .collect()
    }
}

/// Scalar potential `x ↦ Φ₀(x)`, possibly unnormalized.
pub trait ScalarPotential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, _x: &[f64]) -> Option<DVector<f64>> {
        None
    }
    fn hess(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// `Φ′(x)` without allocation, for one-dimensional potentials.
    fn grad_scalar(&self, _x: f64) -> Option<f64> {
        None
    }
    /// `log ∫ e^{-Φ₀} dx` if known in closed form.
    fn log_mass(&self) -> Option<f64> {
        None
    }
    /// Poincaré constant of `e^{-Φ} dx` if known in closed form.
    fn poincare(&self) -> Option<f64> {
        None
    }
    /// Declared `(N, γ)` with `|∇Φ(x)| ≤ N (1 + |x|^γ)`.
    fn gradient_growth(&self) -> (f64, f64);
    fn label(&self) -> String;
}

/// `Φ₀(x) = |x|²/(2s²)`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticPotential {
    pub dim: usize,
    pub scale: f64,
}

impl ScalarPotential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|t| t * t).sum::<f64>() / (2.0 * self.scale * self.scale)
    }
    fn grad(&self, x: &[f64]) -> Option<DVector<f64>> {
        let s2 = self.scale * self.scale;
        Some(DVector::from_iterator(self.dim, x.iter().map(|t| t / s2)))
    }
    fn hess(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.dim, self.dim) / (self.scale * self.scale))
    }
    fn grad_scalar(&self, x: f64) -> Option<f64> {
        (self.dim == 1).then(|| x / (self.scale * self.scale))
    }
    fn log_mass(&self) -> Option<f64> {
        Some(0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * self.scale * self.scale).ln())
    }
    fn poincare(&self) -> Option<f64> {
        Some(1.0 / (self.scale * self.scale))
    }
    fn gradient_growth(&self) -> (f64, f64) {
        (1.0 / (self.scale * self.scale), 1.0)
    }
    fn label(&self) -> String {
        format!("quadratic(scale={})", self.scale)
    }
}

/// `Φ₀(x) = s (x² − 1)²` in one dimension.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWellPotential {
    pub barrier: f64,
}

impl ScalarPotential for DoubleWellPotential {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        let q = x[0] * x[0] - 1.0;
        self.barrier * q * q
    }
    fn grad(&self, x: &[f64]) -> Option<DVector<f64>> {
        let t = x[0];
        Some(DVector::from_element(1, 4.0 * self.barrier * t * (t * t - 1.0)))
    }
    fn hess(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let t = x[0];
        Some(DMatrix::from_element(
            1,
            1,
            self.barrier * (12.0 * t * t - 4.0),
        ))
    }
    fn grad_scalar(&self, x: f64) -> Option<f64> {
        Some(4.0 * self.barrier * x * (x * x - 1.0))
    }
    fn gradient_growth(&self) -> (f64, f64) {
        (4.0 * self.barrier, 3.0)
    }
    fn label(&self) -> String {
        format!("double-well(barrier={})", self.barrier)
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Black-box potential; derivatives by finite differences and, in one
/// dimension, numeric normalization.
#[derive(Clone)]
pub struct FnPotential {
    pub dim: usize,
    pub label: String,
    pub growth: (f64, f64),
    pub f: Arc<ScalarFn>,
}

impl fmt::Debug for FnPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPotential")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl ScalarPotential for FnPotential {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient_growth(&self) -> (f64, f64) {
        self.growth
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Analytic,
    Numeric,
}

/// Energy level above the minimum at which the density is treated as zero
/// when choosing integration windows.
pub const TAIL_LEVEL: f64 = 60.0;

/// Normalized potential: `Φ(x) = Φ₀(x) + log ∫ e^{-Φ₀}`, so that `e^{-Φ} dx`
/// is a probability measure.
#[derive(Debug, Clone)]
pub struct Potential {
    inner: Arc<dyn ScalarPotential>,
    log_mass: f64,
    pub normalization: Normalization,
}

impl Potential {
    pub fn new(inner: Arc<dyn ScalarPotential>) -> Result<Self> {
        if let Some(lm) = inner.log_mass() {
            return Ok(Potential {
                inner,
                log_mass: lm,
                normalization: Normalization::Analytic,
            });
        }
        if inner.dim() != 1 {
            return Err(Error::InvalidArgument(
                "numeric normalization is only available in one dimension".into(),
            ));
        }
        let (lo, hi, vmin) = level_window(&*inner, TAIL_LEVEL)?;
        let mass = adaptive_simpson(|t| (-(inner.value(&[t]) - vmin)).exp(), lo, hi, 1e-13)?;
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Numeric(format!(
                "potential mass {mass} is not finite and positive"
            )));
        }
        Ok(Potential {
            inner,
            log_mass: mass.ln() - vmin,
            normalization: Normalization::Numeric,
        })
    }

    pub fn quadratic(dim: usize, scale: f64) -> Self {
        Potential::new(Arc::new(QuadraticPotential { dim, scale })).expect("analytic normalization")
    }

    pub fn double_well(barrier: f64) -> Result<Self> {
        Potential::new(Arc::new(DoubleWellPotential { barrier }))
    }

    pub fn from_fn<F>(dim: usize, label: &str, growth: (f64, f64), f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Potential::new(Arc::new(FnPotential {
            dim,
            label: label.to_string(),
            growth,
            f: Arc::new(f),
        }))
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn label(&self) -> String {
        self.inner.label()
    }

    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    pub fn analytic_poincare(&self) -> Option<f64> {
        self.inner.poincare()
    }

    pub fn gradient_growth(&self) -> (f64, f64) {
        self.inner.gradient_growth()
    }

    /// Normalized value `Φ(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.log_mass
    }

    /// Density `e^{-Φ(x)}`.
    pub fn density(&self, x: &[f64]) -> f64 {
        (-self.eval(x)).exp()
    }

    pub fn grad(&self, x: &[f64]) -> DVector<f64> {
        self.inner.grad(x).unwrap_or_else(|| self.fd_grad(x))
    }

    /// `Φ′(x)` for one-dimensional potentials.
    pub fn grad_scalar(&self, x: f64) -> f64 {
        match self.inner.grad_scalar(x) {
            Some(g) => g,
            None => self.grad(&[x])[0],
        }
    }

    pub fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        self.inner.hess(x).unwrap_or_else(|| self.fd_hess(x))
    }

    pub fn fd_grad(&self, x: &[f64]) -> DVector<f64> {
        let h = fd_step(x);
        let mut p = x.to_vec();
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|k| {
                p[k] = x[k] + h;
                let up = self.inner.value(&p);
                p[k] = x[k] - h;
                let dn = self.inner.value(&p);
                p[k] = x[k];
                (up - dn) / (2.0 * h)
            }),
        )
    }

    /// Second differences of the value; step `1e-4 (1+|x|)` balances the
    /// `h²` truncation against `ε/h²` roundoff.
    pub fn fd_hess(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let h = 10.0 * fd_step(x);
        let f = |p: &[f64]| self.inner.value(p);
        let mut out = DMatrix::zeros(d, d);
        let mut p = x.to_vec();
        let f0 = f(x);
        for i in 0..d {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let dn = f(&p);
            p[i] = x[i];
            out[(i, i)] = (up - 2.0 * f0 + dn) / (h * h);
            for j in 0..i {
                let mut q = x.to_vec();
                let mut s = 0.0;
                for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    q[i] = x[i] + si * h;
                    q[j] = x[j] + sj * h;
                    s += sign * f(&q);
                }
                out[(i, j)] = s / (4.0 * h * h);
                out[(j, i)] = out[(i, j)];
            }
        }
        out
    }

    /// Largest discrepancy between the supplied derivatives and finite
    /// differences of the value over `probes`, as `(grad, hess)` errors.
    pub fn derivative_defect(&self, probes: &[Vec<f64>]) -> (f64, f64) {
        let mut eg: f64 = 0.0;
        let mut eh: f64 = 0.0;
        for x in probes {
            let g = self.grad(x);
            let scale = 1.0 + g.norm();
            eg = eg.max((g - self.fd_grad(x)).norm() / scale);
            let hm = self.hess(x);
            let scale = 1.0 + hm.norm();
            eh = eh.max((hm - self.fd_hess(x)).norm() / scale);
        }
        (eg, eh)
    }

    /// Symmetric interval `[-r, r]` outside of which `Φ − min Φ` exceeds
    /// `level`, capped at `cap`. One-dimensional potentials only.
    pub fn support_radius(&self, level: f64, cap: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::InvalidArgument("support radius needs d = 1".into()));
        }
        let (lo, hi, _) = level_window(&*self.inner, level)?;
        Ok(lo.abs().max(hi.abs()).min(cap))
    }
}

impl Potential {
    /// `∫ x^k e^{−Φ(x)} dx` in one dimension.
    pub fn moment_1d(&self, k: i32) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::InvalidArgument("moments by quadrature need d = 1".into()));
        }
        let (lo, hi, _) = level_window(&*self.inner, TAIL_LEVEL)?;
        adaptive_simpson(|t| t.powi(k) * self.density(&[t]), lo, hi, 1e-12)
    }
}

/// Window `[lo, hi]` containing the sublevel set `{Φ₀ ≤ min Φ₀ + level}` of a
/// one-dimensional potential, plus the minimum value.
fn level_window(p: &dyn ScalarPotential, level: f64) -> Result<(f64, f64, f64)> {
    let probe = |t: f64| p.value(&[t]);
    let n = 4001;
    let span = 50.0;
    let mut vmin = f64::INFINITY;
    for k in 0..n {
        let t = -span + 2.0 * span * k as f64 / (n - 1) as f64;
        let val = probe(t);
        if val.is_finite() {
            vmin = vmin.min(val);
        }
    }
    if !vmin.is_finite() {
        return Err(Error::Numeric("potential is nowhere finite on [-50, 50]".into()));
    }
    let step = 1e-3;
    let mut hi = 0.0_f64;
    while probe(hi) - vmin <= level {
        hi += step;
        if hi > span {
            return Err(Error::Numeric("potential does not confine within |x| ≤ 50".into()));
        }
    }
    let mut lo = 0.0_f64;
    while probe(lo) - vmin <= level {
        lo -= step;
        if lo < -span {
            return Err(Error::Numeric("potential does not confine within |x| ≤ 50".into()));
        }
    }
    Ok((lo, hi, vmin))
}

/// Complete problem instance.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub diffusion: DiffusionField,
    pub potential: Potential,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: &str, diffusion: DiffusionField, potential: Potential) -> Result<Self> {
        let dim = diffusion.dim();
        if potential.dim() != dim {
            return Err(Error::Dimension(format!(
                "diffusion has d = {dim} but potential has d = {}",
                potential.dim()
            )));
        }
        Ok(ModelSpec {
            name: name.to_string(),
            diffusion,
            potential,
            dim,
            params: BTreeMap::new(),
        })
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Velocity drift of the SDE at `(x, v)`: `b(v) − ∇Φ(x)`.
    pub fn velocity_drift(&self, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        Ok(drift_correction(&self.diffusion, v)? - self.potential.grad(x))
    }
}

/// `bᵢ(v) = Σⱼ (∂ⱼaᵢⱼ(v) − aᵢⱼ(v) vⱼ)`.
pub fn drift_correction(field: &DiffusionField, v: &[f64]) -> Result<DVector<f64>> {
    if v.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            what: "velocity".into(),
            point: v.to_vec(),
        });
    }
    let a = field.eval(v)?;
    let g = field.grad_eval(v)?;
    Ok(assemble_drift(&a, &g, v))
}

pub(crate) fn assemble_drift(a: &DMatrix<f64>, g: &[DMatrix<f64>], v: &[f64]) -> DVector<f64> {
    let d = v.len();
    DVector::from_iterator(
        d,
        (0..d).map(|i| (0..d).map(|j| g[j][(i, j)] - a[(i, j)] * v[j]).sum()),
    )
}

/// Lower-triangular `σ(v)` with `σσᵀ = Σ(v)`.
pub fn cholesky_sigma(field: &DiffusionField, v: &[f64]) -> Result<DMatrix<f64>> {
    let a = field.eval(v)?;
    cholesky(&a).map_err(|(pivot, value)| Error::Ellipticity {
        point: v.to_vec(),
        pivot,
        value,
    })
}

/// Plain Cholesky; on failure returns the offending pivot index and value.
pub fn cholesky(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let d = a.nrows();
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > 0.0) {
            return Err((j, s));
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut t = a[(i, j)];
            for k in 0..j {
                t -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = t / ljj;
        }
    }
    Ok(l)
}

pub const BUILTIN_NAMES: [&str; 4] = ["classic", "bounded-bump", "double-well", "aniso-2d"];

/// Looks up a built-in family by name. Recognized parameters:
/// `barrier` (double-well), `base`/`amp` (bounded-bump), `a11`/`a12`/`a22`
/// (aniso-2d), `a` (classic: constant scalar diffusion), `scale`
/// (classic and bounded-bump: Gaussian width of `e^{-Φ}`).
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let p = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
    let model = match name {
        "classic" => ModelSpec::new(
            name,
            DiffusionField::scalar(p("a", 1.0)),
            Potential::quadratic(1, p("scale", 1.0)),
        )?,
        "bounded-bump" => ModelSpec::new(
            name,
            DiffusionField::bump(1, p("base", 2.0), p("amp", 1.0)),
            Potential::quadratic(1, p("scale", 1.0)),
        )?,
        "double-well" => ModelSpec::new(
            name,
            DiffusionField::scalar(1.0),
            Potential::double_well(p("barrier", 1.0))?,
        )?,
        "aniso-2d" => {
            let m = DMatrix::from_row_slice(
                2,
                2,
                &[p("a11", 2.0), p("a12", 1.0), p("a12", 1.0), p("a22", 2.0)],
            );
            ModelSpec::new(name, DiffusionField::constant(m), Potential::quadratic(2, 1.0))?
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown model '{other}' (known: {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(params
        .iter()
        .fold(model, |m, (k, v)| m.with_param(k, *v)))
}

/// The four built-in families with default parameters.
pub fn builtin_models() -> Vec<ModelSpec> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n, &BTreeMap::new()).expect("built-in model"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bump() -> DiffusionField {
        DiffusionField::bump(1, 2.0, 1.0)
    }

    #[test]
    fn drift_constant_unit() {
        let b = drift_correction(&DiffusionField::scalar(1.0), &[2.0]).unwrap();
        assert_eq!(b[0], -2.0);
    }

    #[test]
    fn drift_constant_two() {
        let b = drift_correction(&DiffusionField::scalar(2.0), &[-1.0]).unwrap();
        assert_eq!(b[0], 2.0);
    }

    #[test]
    fn drift_bump_at_one() {
        // a'(1) = -2/(1+1)² = -0.5, a(1) = 2.5
        let b = drift_correction(&bump(), &[1.0]).unwrap();
        assert_relative_eq!(b[0], -3.0, epsilon = 1e-14);
    }

    #[test]
    fn drift_rejects_nan_field() {
        let f = DiffusionField::from_fn(
            1,
            "broken",
            DeclaredGrowth {
                beta: 0.0,
                m: 0.0,
                regime: GrowthRegime::Sigma3,
            },
            |v| DMatrix::from_element(1, 1, if v[0] > 0.5 { f64::NAN } else { 1.0 }),
        );
        match drift_correction(&f, &[1.0]) {
            Err(Error::NonFinite { what, .. }) => assert_eq!(what, "a[0][0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cholesky_scalar_and_identity() {
        let s = cholesky_sigma(&DiffusionField::scalar(4.0), &[0.3]).unwrap();
        assert_eq!(s[(0, 0)], 2.0);
        let id = cholesky_sigma(&DiffusionField::constant(DMatrix::identity(2, 2)), &[0.0, 1.0])
            .unwrap();
        assert_eq!(id, DMatrix::identity(2, 2));
    }

    #[test]
    fn cholesky_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = cholesky_sigma(&DiffusionField::constant(m.clone()), &[0.0, 0.0]).unwrap();
        assert_relative_eq!(s[(0, 0)], 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(s[(1, 0)], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(s[(1, 1)], 1.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
        assert!((&s * s.transpose() - m).norm() < 1e-14);
    }

    #[test]
    fn cholesky_reports_pivot() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_sigma(&DiffusionField::constant(m), &[0.5, 0.5]) {
            Err(Error::Ellipticity { pivot, point, .. }) => {
                assert_eq!(pivot, 1);
                assert_eq!(point, vec![0.5, 0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classic_is_standard_gaussian() {
        let m = builtin("classic", &BTreeMap::new()).unwrap();
        for x in [-2.0, 0.0, 0.7, 3.0] {
            let expect = (-x * x / 2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert_relative_eq!(m.potential.density(&[x]), expect, max_relative = 1e-14);
        }
        let drift = m.velocity_drift(&[0.0], &[1.0]).unwrap();
        assert_eq!(drift[0], -1.0);
    }

    #[test]
    fn bounded_bump_sup_at_origin() {
        let f = bump();
        assert_eq!(f.eval(&[0.0]).unwrap()[(0, 0)], 3.0);
        for v in [-3.0, -0.1, 0.1, 5.0] {
            assert!(f.eval(&[v]).unwrap()[(0, 0)] < 3.0);
        }
    }

    #[test]
    fn double_well_numeric_normalization() {
        let p = Potential::double_well(1.0).unwrap();
        assert_eq!(p.normalization, Normalization::Numeric);
        let mass = adaptive_simpson(|t| p.density(&[t]), -4.0, 4.0, 1e-12).unwrap();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn builtins_have_consistent_dims() {
        let ms = builtin_models();
        assert_eq!(ms.len(), 4);
        for m in &ms {
            assert_eq!(m.diffusion.dim(), m.dim);
            assert_eq!(m.potential.dim(), m.dim);
        }
        assert!(builtin("nope", &BTreeMap::new()).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = ModelSpec::new("bad", DiffusionField::scalar(1.0), Potential::quadratic(2, 1.0));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn potential_derivatives_match_differences() {
        let probes: Vec<Vec<f64>> = (0..25).map(|k| vec![-3.0 + 0.25 * k as f64]).collect();
        for p in [Potential::quadratic(1, 1.0), Potential::double_well(1.0).unwrap()] {
            let (eg, eh) = p.derivative_defect(&probes);
            assert!(eg < 1e-8, "{eg}");
            assert!(eh < 1e-5, "{eh}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn drift_matches_fd_only(v in -8.0f64..8.0) {
                let analytic = drift_correction(&bump(), &[v]).unwrap();
                let field = bump();
                let a = field.eval(&[v]).unwrap();
                let g = field.fd_grad(&[v]);
                let fd = assemble_drift(&a, &g, &[v]);
                let scale = analytic.norm().max(1e-3);
                prop_assert!((analytic - fd).norm() / scale < 1e-6);
            }

            #[test]
            fn cholesky_reconstructs(v0 in -5.0f64..5.0, v1 in -5.0f64..5.0) {
                let models = builtin_models();
                for m in &models {
                    let v: Vec<f64> = [v0, v1][..m.dim].to_vec();
                    let s = cholesky_sigma(&m.diffusion, &v).unwrap();
                    let a = m.diffusion.eval(&v).unwrap();
                    prop_assert!((&s * s.transpose() - &a).norm() <= 1e-10 * a.norm());
                    prop_assert_eq!(a.clone(), a.transpose());
                }
            }
        }
    }
}
