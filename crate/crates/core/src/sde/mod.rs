//! Ensemble simulation of the kinetic SDE
//! `dX = V dt`, `dV = (b(V) − ∇Φ(X)) dt + √2 σ(V) dB` with `σσᵀ = Σ`.
//!
//! Every path owns a ChaCha stream selected by its index under the master
//! seed, so results do not depend on how paths are split across threads.
//! All ensemble reductions are fixed-order pairwise sums.

mod diagnostics;
mod snapshot;

pub use diagnostics::{
    invariant_moment_checks, moments, quadratic_covariation, weak_order_study, CovariationEstimate,
    CovariationRecord, MixingCurve, MomentCheck, MomentEstimate, PathDiagnostics, WeakOrderStudy,
};
pub use snapshot::{read_snapshot, Snapshot};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assemble_drift, cholesky, ModelSpec};

pub const DEFAULT_BURN_IN: f64 = 20.0;
pub const DEFAULT_SDE_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    EulerMaruyama,
    /// Adds `½ a′(v)(ΔW² − dt)` to the velocity update; `d = 1` only.
    MilsteinDiagonal,
}

/// Starting distribution of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    Point { x: Vec<f64>, v: Vec<f64> },
    /// Independent standard normal coordinates, drawn from each path's
    /// own stream.
    StandardNormal,
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(path as u64);
    r
}

/// Per-step quantities handed to observers.
pub(crate) struct StepInfo {
    /// Martingale part of the velocity increment.
    pub dm: Vec<f64>,
    /// Full velocity increment.
    pub dv: Vec<f64>,
    /// `Σ(V)` at the start of the step, row-major.
    pub a: Vec<f64>,
}

impl StepInfo {
    fn new(d: usize) -> Self {
        StepInfo {
            dm: vec![0.0; d],
            dv: vec![0.0; d],
            a: vec![0.0; d * d],
        }
    }
}

/// One step of the scheme with a given Brownian increment `dw`. The
/// position moves first and the force is evaluated at the new position.
pub(crate) fn kernel(
    model: &ModelSpec,
    integrator: Integrator,
    z: &mut [f64],
    dt: f64,
    dw: &[f64],
    info: &mut StepInfo,
) -> Result<()> {
    let d = model.dim;
    if d == 1 {
        let (x, v) = (z[0], z[1]);
        let (a, ap) = model.diffusion.scalar_eval(v);
        let xn = x + v * dt;
        let drift = ap - a * v - model.potential.grad_scalar(xn);
        let mut dm = (2.0 * a).sqrt() * dw[0];
        if integrator == Integrator::MilsteinDiagonal {
            dm += 0.5 * ap * (dw[0] * dw[0] - dt);
        }
        let dv = drift * dt + dm;
        z[0] = xn;
        z[1] = v + dv;
        info.dm[0] = dm;
        info.dv[0] = dv;
        info.a[0] = a;
        return Ok(());
    }
    let (xs, vs) = z.split_at_mut(d);
    for i in 0..d {
        xs[i] += vs[i] * dt;
    }
    let a = model.diffusion.eval(vs)?;
    let b = assemble_drift(&a, &model.diffusion.grad_eval(vs)?, vs);
    let l = cholesky(&a).map_err(|(pivot, value)| Error::Ellipticity {
        point: vs.to_vec(),
        pivot,
        value,
    })?;
    let g = model.potential.grad(xs);
    for i in 0..d {
        let mut dm = 0.0;
        for j in 0..=i {
            dm += l[(i, j)] * dw[j];
        }
        dm *= std::f64::consts::SQRT_2;
        info.dm[i] = dm;
        info.dv[i] = (b[i] - g[i]) * dt + dm;
        for j in 0..d {
            info.a[i * d + j] = a[(i, j)];
        }
    }
    for i in 0..d {
        vs[i] += info.dv[i];
    }
    Ok(())
}

/// Paths of the kinetic SDE advanced in lockstep.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub n_paths: usize,
    pub dim: usize,
    /// `n_paths × 2d`, row `(x₁…x_d, v₁…v_d)`.
    pub state: Vec<f64>,
    pub time: f64,
    pub rng_seed: u64,
    pub integrator: Integrator,
    /// Total time spent in [`Ensemble::burn_in`].
    pub burn_in: f64,
    pub model: ModelSpec,
    rngs: Vec<ChaCha8Rng>,
}

impl Ensemble {
    pub fn new(model: &ModelSpec, n_paths: usize, seed: u64, integrator: Integrator, init: &InitialState) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
        }
        let d = model.dim;
        if integrator == Integrator::MilsteinDiagonal && d != 1 {
            return Err(Error::InvalidArgument("Milstein is only offered for d = 1".into()));
        }
        let mut rngs: Vec<ChaCha8Rng> = (0..n_paths).map(|p| path_rng(seed, p)).collect();
        let mut state = vec![0.0; n_paths * 2 * d];
        match init {
            InitialState::Point { x, v } => {
                if x.len() != d || v.len() != d {
                    return Err(Error::Dimension(format!("initial point must have {d} + {d} coordinates")));
                }
                for row in state.chunks_mut(2 * d) {
                    row[..d].copy_from_slice(x);
                    row[d..].copy_from_slice(v);
                }
            }
            InitialState::StandardNormal => {
                for (row, r) in state.chunks_mut(2 * d).zip(rngs.iter_mut()) {
                    row.iter_mut().for_each(|z| *z = r.sample(StandardNormal));
                }
            }
        }
        Ok(Ensemble {
            n_paths,
            dim: d,
            state,
            time: 0.0,
            rng_seed: seed,
            integrator,
            burn_in: 0.0,
            model: model.clone(),
            rngs,
        })
    }

    /// `(x, v)` of one path.
    pub fn path(&self, p: usize) -> &[f64] {
        &self.state[p * 2 * self.dim..(p + 1) * 2 * self.dim]
    }

    /// Advances every path by `nsteps` steps of size `dt`, calling
    /// `observe(acc, step, state, info)` after each step. Returns one
    /// accumulator per path, in path order.
    pub(crate) fn run_paths<O, I, F>(&mut self, dt: f64, nsteps: usize, init: I, observe: F) -> Result<Vec<O>>
    where
        O: Send,
        I: Fn(&[f64]) -> O + Sync,
        F: Fn(&mut O, usize, &[f64], &StepInfo) + Sync,
    {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let d = self.dim;
        let model = &self.model;
        let integrator = self.integrator;
        let sdt = dt.sqrt();
        let t0 = self.time;
        let results: Vec<std::result::Result<O, (usize, Error)>> = self
            .state
            .par_chunks_mut(2 * d)
            .zip(self.rngs.par_iter_mut())
            .enumerate()
            .map(|(p, (z, rng))| {
                let mut acc = init(z);
                let mut info = StepInfo::new(d);
                let mut dw = vec![0.0; d];
                for k in 0..nsteps {
                    for w in dw.iter_mut() {
                        let xi: f64 = rng.sample(StandardNormal);
                        *w = sdt * xi;
                    }
                    kernel(model, integrator, z, dt, &dw, &mut info).map_err(|e| (p, e))?;
                    if z.iter().any(|t| !t.is_finite()) {
                        return Err((
                            p,
                            Error::BlowUp {
                                path: p,
                                time: t0 + (k + 1) as f64 * dt,
                            },
                        ));
                    }
                    observe(&mut acc, k, z, &info);
                }
                Ok(acc)
            })
            .collect();
        self.time = t0 + nsteps as f64 * dt;
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(o) => out.push(o),
                Err((_, e)) => return Err(e),
            }
        }
        Ok(out)
    }

    /// One step of size `dt` for every path.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        self.advance(dt, 1)
    }

    pub fn advance(&mut self, dt: f64, nsteps: usize) -> Result<()> {
        self.run_paths(dt, nsteps, |_| (), |_, _, _, _| ())?;
        Ok(())
    }

    /// Advances by `t` (rounded to whole steps) and records it as burn-in.
    pub fn burn_in(&mut self, t: f64, dt: f64) -> Result<()> {
        let n = steps_for(t, dt)?;
        self.advance(dt, n)?;
        self.burn_in += n as f64 * dt;
        Ok(())
    }

    /// Runs for time `t`, accumulating per path the compensated quadratic
    /// covariation `Σ ΔMⁱΔMʲ` of the martingale increments, the raw
    /// `Σ ΔVⁱΔVʲ`, and `2∫ a_{ij}(V_s) ds` by the left-point rule.
    pub fn record_covariation(&mut self, t: f64, dt: f64) -> Result<CovariationRecord> {
        let n = steps_for(t, dt)?;
        let d = self.dim;
        let acc = self.run_paths(
            dt,
            n,
            |_| vec![0.0; 3 * d * d],
            |acc, _, _, info| {
                for i in 0..d {
                    for j in 0..d {
                        let k = i * d + j;
                        acc[k] += info.dm[i] * info.dm[j];
                        acc[d * d + k] += info.dv[i] * info.dv[j];
                        acc[2 * d * d + k] += 2.0 * info.a[k] * dt;
                    }
                }
            },
        )?;
        Ok(CovariationRecord {
            dim: d,
            t: n as f64 * dt,
            steps: n,
            per_path: acc,
        })
    }

    /// Stationary autocovariance of `g(x, v)` at lags that are multiples of
    /// `dt`, measured from the current state.
    pub fn mixing_curve<G>(&mut self, g: G, lags: &[f64], dt: f64) -> Result<MixingCurve>
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let steps: Vec<usize> = lags.iter().map(|l| steps_for(*l, dt)).collect::<Result<_>>()?;
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("lags must be strictly increasing".into()));
        }
        let last = *steps.last().ok_or_else(|| Error::InvalidArgument("empty lag grid".into()))?;
        let nl = steps.len();
        let steps_ref = &steps;
        let g = &g;
        let samples = self.run_paths(
            dt,
            last,
            |z| {
                let mut s = Vec::with_capacity(nl + 1);
                s.push(g(z));
                if steps_ref[0] == 0 {
                    s.push(s[0]);
                }
                s
            },
            |s, k, z, _| {
                if steps_ref.binary_search(&(k + 1)).is_ok() {
                    s.push(g(z));
                }
            },
        )?;
        let lags_exact: Vec<f64> = steps.iter().map(|k| *k as f64 * dt).collect();
        Ok(MixingCurve::from_samples(lags_exact, &samples, self.burn_in))
    }
}

pub(crate) fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid time {t} or step {dt}")));
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidArgument(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}
