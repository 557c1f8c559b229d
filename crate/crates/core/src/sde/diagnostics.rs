use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kernel, path_rng, steps_for, Ensemble, InitialState, Integrator, StepInfo};
use crate::certificate::RateCertificate;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::operators::{observed_order, pairwise_sum};
use crate::semigroup::{fit_exponential, OuOracle};

/// Sample mean and standard error, both by pairwise summation.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub name: String,
    pub value: f64,
    pub se: f64,
}

/// Ensemble moments of the current state: per coordinate `x`, `v`, `x²`,
/// `v²` and `x·v`.
pub fn moments(ens: &Ensemble) -> Vec<MomentEstimate> {
    let d = ens.dim;
    let suffix = |i: usize| if d == 1 { String::new() } else { (i + 1).to_string() };
    let mut out = Vec::new();
    for i in 0..d {
        let col = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            ens.state.chunks(2 * d).map(|z| f(z[i], z[d + i])).collect()
        };
        let s = suffix(i);
        let items: [(String, Vec<f64>); 5] = [
            (format!("x{s}"), col(&|x, _| x)),
            (format!("v{s}"), col(&|_, v| v)),
            (format!("x{s}^2"), col(&|x, _| x * x)),
            (format!("v{s}^2"), col(&|_, v| v * v)),
            (format!("x{s}v{s}"), col(&|x, v| x * v)),
        ];
        for (name, xs) in items {
            let (value, se) = mean_se(&xs);
            out.push(MomentEstimate { name, value, se });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub name: String,
    pub value: f64,
    pub se: f64,
    pub expected: f64,
    /// `|value − expected| ≤ 3·se`.
    pub passed: bool,
}

/// Compares ensemble moments with those of `μ = e^{−Φ}dx ⊗ N(0, I)`.
/// Position moments are included when they are computable: by quadrature
/// in one dimension, from the Hessian for quadratic potentials otherwise.
pub fn invariant_moment_checks(ens: &Ensemble) -> Result<Vec<MomentCheck>> {
    let d = ens.dim;
    let est = moments(ens);
    let pos: Option<Vec<(f64, f64)>> = if d == 1 {
        let m0 = ens.model.potential.moment_1d(0)?;
        Some(vec![(ens.model.potential.moment_1d(1)? / m0, ens.model.potential.moment_1d(2)? / m0)])
    } else {
        OuOracle::from_model(&ens.model)
            .ok()
            .map(|o| (0..d).map(|i| (0.0, o.gram[(i, i)])).collect())
    };
    let mut out = Vec::new();
    for (i, chunk) in est.chunks(5).enumerate() {
        let mut expected = vec![None, Some(0.0), None, Some(1.0), Some(0.0)];
        if let Some(p) = &pos {
            expected[0] = Some(p[i].0);
            expected[2] = Some(p[i].1);
        }
        for (m, e) in chunk.iter().zip(expected) {
            if let Some(e) = e {
                out.push(MomentCheck {
                    name: m.name.clone(),
                    value: m.value,
                    se: m.se,
                    expected: e,
                    passed: (m.value - e).abs() <= 3.0 * m.se,
                });
            }
        }
    }
    Ok(out)
}

/// Per-path covariation sums recorded by [`Ensemble::record_covariation`].
#[derive(Debug, Clone)]
pub struct CovariationRecord {
    pub dim: usize,
    pub t: f64,
    pub steps: usize,
    /// Per path: compensated `d×d`, raw `d×d`, reference `d×d`, row-major.
    pub per_path: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariationEstimate {
    pub i: usize,
    pub j: usize,
    pub t: f64,
    /// Path average of `Σ ΔMⁱΔMʲ` over martingale increments.
    pub estimate: f64,
    pub se: f64,
    /// Path average of `Σ ΔVⁱΔVʲ`, drift included.
    pub raw: f64,
    pub raw_se: f64,
    /// Path average of `2∫ a_{ij}(V_s) ds`.
    pub reference: f64,
    pub reference_se: f64,
    /// Same-path difference `estimate − reference`.
    pub difference: f64,
    pub difference_se: f64,
    /// `|difference| ≤ 3·difference_se`.
    pub passed: bool,
}

/// `[Vⁱ, Vʲ]_t` from a recorded history, compared path by path with
/// `2∫₀ᵗ a_{ij}(V_s) ds`.
pub fn quadratic_covariation(rec: &CovariationRecord, i: usize, j: usize) -> Result<CovariationEstimate> {
    if rec.steps == 0 || rec.per_path.is_empty() {
        return Err(Error::Usage("no recorded increments: run record_covariation first".into()));
    }
    let d = rec.dim;
    if i >= d || j >= d {
        return Err(Error::InvalidArgument(format!("indices ({i}, {j}) out of range for d = {d}")));
    }
    let k = i * d + j;
    let col = |off: usize| -> Vec<f64> { rec.per_path.iter().map(|a| a[off + k]).collect() };
    let (q, qs) = (col(0), col(2 * d * d));
    let diff: Vec<f64> = q.iter().zip(&qs).map(|(a, b)| a - b).collect();
    let (estimate, se) = mean_se(&q);
    let (raw, raw_se) = mean_se(&col(d * d));
    let (reference, reference_se) = mean_se(&qs);
    let (difference, difference_se) = mean_se(&diff);
    Ok(CovariationEstimate {
        i,
        j,
        t: rec.t,
        estimate,
        se,
        raw,
        raw_se,
        reference,
        reference_se,
        difference,
        difference_se,
        passed: difference.abs() <= 3.0 * difference_se,
    })
}

/// Stationary autocovariance `Cov(g(Z₀), g(Z_t))` across paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCurve {
    pub lags: Vec<f64>,
    pub autocovariance: Vec<f64>,
    pub se: Vec<f64>,
    /// `Var g(Z₀)`.
    pub variance: f64,
    pub burn_in: f64,
    /// Decay rate of the suffix maximum of `|Cov|` over the lags where it
    /// exceeds three standard errors.
    pub fitted_rate: Option<f64>,
    /// `1 + 2Σρ_k` times the lag spacing, truncated at the first
    /// non-positive autocorrelation.
    pub integrated_time: f64,
    /// `n_paths · max(1, T/τ_int)` for time averages over the lag window.
    pub ess: f64,
    pub n_paths: usize,
    /// `θ₁e^{−θ₂t}·Var g`, once compared with a certificate.
    pub certificate_envelope: Vec<f64>,
    /// `min_k (envelope_k + 3·se_k − |Cov_k|)`.
    pub envelope_margin: Option<f64>,
}

impl MixingCurve {
    pub(crate) fn from_samples(lags: Vec<f64>, samples: &[Vec<f64>], burn_in: f64) -> Self {
        let n = samples.len();
        let g0: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let (m0, _) = mean_se(&g0);
        let c0: Vec<f64> = g0.iter().map(|g| g - m0).collect();
        let variance = pairwise_sum(&c0.iter().map(|c| c * c).collect::<Vec<_>>()) / n as f64;
        let mut cov = Vec::with_capacity(lags.len());
        let mut se = Vec::with_capacity(lags.len());
        for k in 0..lags.len() {
            let gk: Vec<f64> = samples.iter().map(|s| s[k + 1]).collect();
            let (mk, _) = mean_se(&gk);
            let prod: Vec<f64> = c0.iter().zip(&gk).map(|(a, b)| a * (b - mk)).collect();
            let (c, s) = mean_se(&prod);
            cov.push(c);
            se.push(s);
        }
        // suffix maximum of |Cov| as the envelope of an oscillating decay
        let mut env = vec![0.0; cov.len()];
        let mut run: f64 = 0.0;
        for k in (0..cov.len()).rev() {
            run = run.max(cov[k].abs());
            env[k] = run;
        }
        let (ft, fy): (Vec<f64>, Vec<f64>) = lags
            .iter()
            .zip(&env)
            .zip(&se)
            .filter(|((t, e), s)| **t > 0.0 && **e > 3.0 * **s)
            .map(|((t, e), _)| (*t, *e))
            .unzip();
        let fitted_rate = if ft.len() >= 2 { fit_exponential(&ft, &fy).ok().map(|r| r.0) } else { None };
        let spacing = if lags.len() >= 2 { lags[1] - lags[0] } else { lags.first().copied().unwrap_or(0.0) };
        let mut tau = 1.0;
        if variance > 0.0 {
            for c in cov.iter().filter(|_| true).skip(usize::from(lags.first() == Some(&0.0))) {
                let rho = c / variance;
                if rho <= 0.0 {
                    break;
                }
                tau += 2.0 * rho;
            }
        }
        let integrated_time = tau * spacing;
        let span = lags.last().copied().unwrap_or(0.0);
        let ess = n as f64 * if integrated_time > 0.0 { (span / integrated_time).max(1.0) } else { 1.0 };
        MixingCurve {
            lags,
            autocovariance: cov,
            se,
            variance,
            burn_in,
            fitted_rate,
            integrated_time,
            ess,
            n_paths: n,
            certificate_envelope: Vec::new(),
            envelope_margin: None,
        }
    }

    /// Fills the envelope `θ₁e^{−θ₂t}·Var g` and its margin.
    pub fn compare(&mut self, cert: &RateCertificate) {
        self.certificate_envelope = self.lags.iter().map(|t| cert.envelope(*t, self.variance)).collect();
        self.envelope_margin = Some(
            self.certificate_envelope
                .iter()
                .zip(&self.autocovariance)
                .zip(&self.se)
                .map(|((e, c), s)| e + 3.0 * s - c.abs())
                .fold(f64::INFINITY, f64::min),
        );
    }

    pub fn envelope_holds(&self) -> bool {
        self.envelope_margin.is_some_and(|m| m >= 0.0)
    }

    /// The burn-in heuristic `burn_in ≥ 10 / rate`.
    pub fn equilibrated(&self) -> bool {
        self.fitted_rate.is_some_and(|r| r > 0.0 && self.burn_in >= 10.0 / r)
    }

    pub const CSV_HEADER: [&'static str; 4] = ["lag", "autocovariance", "se", "envelope"];

    pub fn csv_rows(&self) -> Vec<[f64; 4]> {
        (0..self.lags.len())
            .map(|k| {
                let e = self.certificate_envelope.get(k).copied().unwrap_or(f64::NAN);
                [self.lags[k], self.autocovariance[k], self.se[k], e]
            })
            .collect()
    }
}

/// Everything measured on one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    pub model: String,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub integrator: Integrator,
    pub burn_in: f64,
    pub moments: Vec<MomentCheck>,
    pub covariation: Vec<CovariationEstimate>,
    pub mixing: Vec<(String, MixingCurve)>,
    pub effective_sample_size: f64,
}

impl PathDiagnostics {
    pub fn failures(&self) -> Vec<String> {
        let mut f = Vec::new();
        for m in self.moments.iter().filter(|m| !m.passed) {
            f.push(format!("moment {}: {} vs {} (se {})", m.name, m.value, m.expected, m.se));
        }
        for c in self.covariation.iter().filter(|c| !c.passed) {
            f.push(format!("covariation [{}, {}]: difference {} (se {})", c.i, c.j, c.difference, c.difference_se));
        }
        for (name, m) in self.mixing.iter().filter(|(_, m)| !m.envelope_holds()) {
            f.push(format!("autocovariance of {name} exceeds the envelope (margin {:?})", m.envelope_margin));
        }
        f
    }
}

/// Weak error of `E[x₁(t)²]` for several step sizes against a fine
/// reference, with Brownian increments shared across resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakOrderStudy {
    pub t: f64,
    pub dt_ref: f64,
    pub reference_value: f64,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub se: Vec<f64>,
    pub observed_order: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn weak_order_study(
    model: &ModelSpec,
    init: &InitialState,
    t: f64,
    dts: &[f64],
    dt_ref: f64,
    n_paths: usize,
    seed: u64,
    integrator: Integrator,
) -> Result<WeakOrderStudy> {
    let d = model.dim;
    let n_ref = steps_for(t, dt_ref)?;
    let ratios: Vec<usize> = dts
        .iter()
        .map(|dt| {
            let r = steps_for(*dt, dt_ref)?;
            if r == 0 || n_ref % r != 0 {
                return Err(Error::InvalidArgument(format!("dt = {dt} is not a divisor-compatible multiple of {dt_ref}")));
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    // validates the integrator/dimension combination and the initial state
    Ensemble::new(model, 1, seed, integrator, init)?;
    let sdt = dt_ref.sqrt();
    let per_path: Vec<Result<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut z0 = vec![0.0; 2 * d];
            match init {
                InitialState::Point { x, v } => {
                    z0[..d].copy_from_slice(x);
                    z0[d..].copy_from_slice(v);
                }
                InitialState::StandardNormal => z0.iter_mut().for_each(|z| *z = rng.sample(StandardNormal)),
            }
            let mut zr = z0.clone();
            let mut zs = vec![z0; ratios.len()];
            let mut bufs = vec![vec![0.0; d]; ratios.len()];
            let mut dw = vec![0.0; d];
            let mut info = StepInfo::new(d);
            for k in 0..n_ref {
                for w in dw.iter_mut() {
                    let xi: f64 = rng.sample(StandardNormal);
                    *w = sdt * xi;
                }
                kernel(model, integrator, &mut zr, dt_ref, &dw, &mut info)?;
                for (r, (z, b)) in ratios.iter().zip(zs.iter_mut().zip(bufs.iter_mut())) {
                    b.iter_mut().zip(&dw).for_each(|(a, w)| *a += w);
                    if (k + 1) % r == 0 {
                        kernel(model, integrator, z, *r as f64 * dt_ref, b, &mut info)?;
                        b.iter_mut().for_each(|a| *a = 0.0);
                    }
                }
            }
            if zr.iter().chain(zs.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { path: p, time: t });
            }
            let mut out = vec![zr[0] * zr[0]];
            out.extend(zs.iter().map(|z| z[0] * z[0] - zr[0] * zr[0]));
            Ok(out)
        })
        .collect();
    let rows = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    let (reference_value, _) = mean_se(&rows.iter().map(|r| r[0]).collect::<Vec<_>>());
    let mut errors = Vec::new();
    let mut se = Vec::new();
    for k in 0..dts.len() {
        let (m, s) = mean_se(&rows.iter().map(|r| r[k + 1]).collect::<Vec<_>>());
        errors.push(m);
        se.push(s);
    }
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    Ok(WeakOrderStudy {
        t,
        dt_ref,
        reference_value,
        dts: dts.to_vec(),
        observed_order: observed_order(dts, &abs),
        errors,
        se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::certify;
    use crate::model::builtin;
    use std::collections::BTreeMap;

    fn model(name: &str, params: &[(&str, f64)]) -> ModelSpec {
        let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        builtin(name, &p).unwrap()
    }

    fn stationary(m: &ModelSpec, n: usize, seed: u64) -> Ensemble {
        Ensemble::new(m, n, seed, Integrator::EulerMaruyama, &InitialState::StandardNormal).unwrap()
    }

    #[test]
    fn classic_invariant_moments() {
        let mut e = stationary(&model("classic", &[]), 20_000, 7);
        e.burn_in(5.0, 0.01).unwrap();
        for c in invariant_moment_checks(&e).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn doubled_diffusion_keeps_gaussian_velocity() {
        let mut e = stationary(&model("classic", &[("a", 2.0)]), 20_000, 8);
        e.burn_in(5.0, 0.01).unwrap();
        let v2 = invariant_moment_checks(&e).unwrap().into_iter().find(|c| c.name == "v^2").unwrap();
        assert!(v2.passed, "{v2:?}");
    }

    #[test]
    fn standard_error_scales_with_paths() {
        let m = model("classic", &[]);
        let se = |n| {
            let mut e = stationary(&m, n, 11);
            e.advance(0.01, 50).unwrap();
            moments(&e).into_iter().find(|m| m.name == "x^2").unwrap().se
        };
        let r = se(8000) / se(4000);
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.15 * std::f64::consts::FRAC_1_SQRT_2, "{r}");
    }

    #[test]
    fn covariation_of_constant_field() {
        let mut e = stationary(&model("classic", &[("a", 2.0)]), 20_000, 3);
        let rec = e.record_covariation(1.0, 0.01).unwrap();
        let q = quadratic_covariation(&rec, 0, 0).unwrap();
        assert!((q.estimate - 4.0).abs() <= 3.0 * q.se, "{q:?}");
        assert!(q.passed, "{q:?}");
        assert!((q.reference - 4.0).abs() < 1e-9);
    }

    #[test]
    fn covariation_of_bump_field() {
        let mut e = Ensemble::new(&model("bounded-bump", &[]), 20_000, 4, Integrator::MilsteinDiagonal, &InitialState::StandardNormal)
            .unwrap();
        let rec = e.record_covariation(1.0, 0.01).unwrap();
        let q = quadratic_covariation(&rec, 0, 0).unwrap();
        assert!(q.passed, "{q:?}");
        assert!((q.estimate - q.reference).abs() < 0.1 * q.reference);
    }

    #[test]
    fn off_diagonal_covariation_vanishes() {
        let mut e = stationary(&model("aniso-2d", &[("a12", 0.0)]), 10_000, 5);
        let rec = e.record_covariation(1.0, 0.01).unwrap();
        let q = quadratic_covariation(&rec, 0, 1).unwrap();
        assert!(q.estimate.abs() <= 3.0 * q.se, "{q:?}");
        assert!(q.passed);
    }

    #[test]
    fn covariation_needs_history() {
        let mut e = stationary(&model("classic", &[]), 10, 5);
        let rec = e.record_covariation(0.0, 0.01).unwrap();
        assert!(matches!(quadratic_covariation(&rec, 0, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn classic_mixing_rate() {
        let mut e = stationary(&model("classic", &[]), 20_000, 6);
        e.burn_in(25.0, 0.01).unwrap();
        let lags: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
        let mut c = e.mixing_curve(|z| z[0], &lags, 0.01).unwrap();
        let r = c.fitted_rate.unwrap();
        assert!((r - 0.5).abs() < 0.1, "{r}");
        assert!(c.ess >= 20_000.0);
        c.compare(&certify(1.0, 1.0, 1.0, 0.0, 1, 2.0).unwrap());
        assert!(c.envelope_holds());
        assert!(c.equilibrated());
        assert!((c.autocovariance[0] - c.variance).abs() < 1e-12);
    }

    #[test]
    fn constant_observable_has_no_autocovariance() {
        let mut e = stationary(&model("classic", &[]), 500, 6);
        let c = e.mixing_curve(|_| 1.0, &[0.0, 0.5, 1.0], 0.01).unwrap();
        assert!(c.autocovariance.iter().all(|x| *x == 0.0));
        assert!(c.fitted_rate.is_none());
    }

    #[test]
    fn euler_maruyama_weak_order_one() {
        let m = model("classic", &[]);
        let init = InitialState::Point { x: vec![1.0], v: vec![0.0] };
        let s = weak_order_study(&m, &init, 2.0, &[0.02, 0.01, 0.005], 0.00125, 4000, 1, Integrator::EulerMaruyama).unwrap();
        assert!((s.observed_order - 1.0).abs() < 0.25, "{s:?}");
        for (e, se) in s.errors.iter().zip(&s.se) {
            assert!(e.abs() > 3.0 * se, "{s:?}");
        }
    }
}
