//! Stage orchestration and the consolidated report.

use std::collections::BTreeMap;
use std::time::Instant;

use log::info;
use mlangevin_core::assumptions::{check_assumptions, AssumptionOptions, AssumptionReport};
use mlangevin_core::certificate::{
    certify_inputs, certify_report, check_rate_condition, CertificateInputs, Provenance, RateCertificate, RateCondition,
};
use mlangevin_core::model::{builtin, ModelSpec};
use mlangevin_core::operators::{
    assemble, build_grid, conjugation_defect, conjugation_probes, observed_order, spectral_gap_detail, symmetry_defects,
    test_antisymmetry_form, test_bs_bound, test_dissipativity, test_invariance, test_macroscopic_coercivity,
    test_microscopic_coercivity, GapEstimate, InequalityResult, OperatorKind, PhaseBox, PhaseGrid, MAX_GAP_NODES,
};
use mlangevin_core::sde::{
    invariant_moment_checks, quadratic_covariation, Ensemble, InitialState, PathDiagnostics,
};
use mlangevin_core::semigroup::{decay_curves, evolve_fokker_planck, DecayCurve, FitOptions, FokkerPlanckRun, OuOracle};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stage};

/// Smallest acceptable observed order of the conjugation defect.
pub const CONJUGATION_ORDER: f64 = 1.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugationStudy {
    pub nx: Vec<usize>,
    pub spacing: Vec<f64>,
    /// `(probe, defects per resolution, observed order)`.
    pub probes: Vec<(String, Vec<f64>, f64)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorResults {
    pub nx: usize,
    pub nv: usize,
    pub phase_box: PhaseBox,
    pub inequalities: Vec<InequalityResult>,
    /// Relative departures from exact μ-symmetry of `S` and antisymmetry of `A`.
    pub symmetry_defects: (f64, f64),
    pub spectral_gap: Option<GapEstimate>,
    /// `gap − θ₂`.
    pub gap_margin: Option<f64>,
    pub conjugation: ConjugationStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupResults {
    /// `grid` for the discretized generator, `ou-oracle` for exact linear
    /// dynamics in higher dimension.
    pub method: String,
    pub curves: Vec<DecayCurve>,
    pub fokker_planck: Option<FokkerPlanckRun>,
    /// Exact gap of the linear drift when the oracle is used.
    pub oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub version: String,
    pub config: ExperimentConfig,
    pub stages_run: Vec<Stage>,
    pub skipped: Vec<(Stage, String)>,
    pub assumptions: Option<AssumptionReport>,
    pub certificate: Option<RateCertificate>,
    pub rate_condition: Option<RateCondition>,
    pub operators: Option<OperatorResults>,
    pub semigroup: Option<SemigroupResults>,
    pub sde: Option<PathDiagnostics>,
    pub verdict: Verdict,
    pub timing_ms: BTreeMap<String, f64>,
}

impl ReportBundle {
    /// Measured gap: discretized generator if available, else the exact
    /// linear-drift gap.
    pub fn measured_gap(&self) -> Option<f64> {
        self.operators
            .as_ref()
            .and_then(|o| o.spectral_gap.as_ref().map(|g| g.gap))
            .or_else(|| self.semigroup.as_ref().and_then(|s| s.oracle_gap))
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: ModelSpec,
    failures: Vec<String>,
}

impl Ctx<'_> {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

/// Runs every resolved stage. Stage errors are recorded as failures and
/// skip the stages that depend on them.
pub fn run(cfg: &ExperimentConfig) -> ReportBundle {
    let model = builtin(&cfg.model.name, &cfg.model.params).expect("validated model");
    let mut ctx = Ctx {
        cfg,
        model,
        failures: Vec::new(),
    };
    let stages = cfg.resolved_stages();
    let mut bundle = ReportBundle {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        stages_run: Vec::new(),
        skipped: Vec::new(),
        assumptions: None,
        certificate: None,
        rate_condition: None,
        operators: None,
        semigroup: None,
        sde: None,
        verdict: Verdict {
            passed: true,
            failures: Vec::new(),
        },
        timing_ms: BTreeMap::new(),
    };
    for stage in stages {
        if stage > Stage::Certify && bundle.certificate.is_none() {
            bundle.skipped.push((stage, "no certificate".into()));
            continue;
        }
        if stage == Stage::Certify && cfg.certificate.explicit.is_none() && bundle.assumptions.is_none() {
            bundle.skipped.push((stage, "no assumption report".into()));
            continue;
        }
        info!("stage {}", stage.name());
        let t0 = Instant::now();
        let outcome = match stage {
            Stage::Assumptions => stage_assumptions(&mut ctx).map(|r| bundle.assumptions = Some(r)),
            Stage::Certify => stage_certify(&mut ctx, bundle.assumptions.as_ref()).map(|(c, rc)| {
                bundle.certificate = Some(c);
                bundle.rate_condition = Some(rc);
            }),
            Stage::Operators => {
                if ctx.model.dim != 1 {
                    bundle.skipped.push((stage, format!("phase-space grids need d = 1 (model has d = {})", ctx.model.dim)));
                    continue;
                }
                stage_operators(&mut ctx, bundle.certificate.as_ref().unwrap()).map(|r| bundle.operators = Some(r))
            }
            Stage::Semigroup => match stage_semigroup(&mut ctx, bundle.certificate.as_ref().unwrap()) {
                Ok(Some(r)) => {
                    bundle.semigroup = Some(r);
                    Ok(())
                }
                Ok(None) => {
                    bundle.skipped.push((stage, "no evolution available for this model".into()));
                    continue;
                }
                Err(e) => Err(e),
            },
            Stage::Sde => stage_sde(&mut ctx, bundle.certificate.as_ref().unwrap()).map(|r| bundle.sde = Some(r)),
        };
        bundle.timing_ms.insert(stage.name().into(), t0.elapsed().as_secs_f64() * 1e3);
        match outcome {
            Ok(()) => bundle.stages_run.push(stage),
            Err(e) => ctx.failures.push(format!("{}: {e}", stage.name())),
        }
    }
    bundle.verdict = Verdict {
        passed: ctx.failures.is_empty(),
        failures: ctx.failures,
    };
    bundle
}

type StageResult<T> = Result<T, mlangevin_core::Error>;

fn stage_assumptions(ctx: &mut Ctx) -> StageResult<AssumptionReport> {
    let a = &ctx.cfg.assumptions;
    let opts = AssumptionOptions {
        v_box_radius: a.box_radius,
        x_box_radius: a.box_radius,
        n_probes: a.n_probes,
        gh_order: a.gh_order,
        lambda_override: a.lambda_override,
        ..AssumptionOptions::default()
    };
    let r = check_assumptions(&ctx.model, &opts)?;
    for f in r.flags.iter().filter(|f| !f.passed) {
        ctx.failures.push(format!("assumption {}: {}", f.condition, f.detail));
    }
    Ok(r)
}

fn stage_certify(ctx: &mut Ctx, report: Option<&AssumptionReport>) -> StageResult<(RateCertificate, RateCondition)> {
    let c = &ctx.cfg.certificate;
    let cert = match (&c.explicit, report) {
        (Some(e), _) => certify_inputs(
            CertificateInputs {
                c_sigma: e.c_sigma,
                n_sigma: e.n_sigma,
                lambda: e.lambda,
                c_phi: c.c_phi,
                d: e.dim,
                theta1: c.theta1,
            },
            Provenance::Explicit,
        )?,
        (None, Some(r)) => certify_report(r, c.c_phi, c.theta1)?,
        (None, None) => unreachable!("gated by the caller"),
    };
    let rc = check_rate_condition(&cert, cert.inputs.c_sigma, cert.inputs.lambda)?;
    ctx.check(rc.satisfied, || "rate condition".into());
    Ok((cert, rc))
}

fn grid_for(model: &ModelSpec, nx: usize, nv: usize) -> StageResult<PhaseGrid> {
    build_grid(model, nx, nv, None)
}

fn stage_operators(ctx: &mut Ctx, cert: &RateCertificate) -> StageResult<OperatorResults> {
    let g = &ctx.cfg.grid;
    let seed = ctx.cfg.seed;
    let n = g.n_test_functions;
    let grid = grid_for(&ctx.model, g.nx, g.nv)?;
    let l = assemble(&grid, OperatorKind::L)?;
    let s = assemble(&grid, OperatorKind::S)?;
    let a = assemble(&grid, OperatorKind::A)?;
    let p = assemble(&grid, OperatorKind::P)?;
    let ps = assemble(&grid, OperatorKind::PS)?;
    let inp = cert.inputs;
    let inequalities = vec![
        test_dissipativity(&grid, &l, n, seed)?,
        test_invariance(&grid, &l, n, seed.wrapping_add(1))?,
        test_antisymmetry_form(&grid, &a, n, seed.wrapping_add(2))?,
        test_microscopic_coercivity(&grid, &s, &ps, inp.c_sigma, n, seed.wrapping_add(3))?,
        test_macroscopic_coercivity(&grid, &a, &p, inp.lambda, n, seed.wrapping_add(4))?,
        test_bs_bound(&grid, inp.n_sigma, n, seed.wrapping_add(5))?,
    ];
    for r in &inequalities {
        ctx.check(r.passed, || format!("operator inequality {}: value {} vs threshold {}", r.name, r.value, r.threshold));
    }
    let sym = symmetry_defects(&grid)?;
    let spectral_gap = if grid.len() <= MAX_GAP_NODES {
        Some(spectral_gap_detail(&l, &grid)?)
    } else {
        None
    };
    let gap_margin = spectral_gap.as_ref().map(|e| e.gap - cert.theta2);
    if let Some(m) = gap_margin {
        ctx.check(m > 0.0, || format!("certified theta2 {} is not below the measured gap", cert.theta2));
    }
    let conjugation = conjugation_study(&ctx.model, g.nx, g.nv)?;
    ctx.check(conjugation.passed, || format!("conjugation order below {CONJUGATION_ORDER}"));
    Ok(OperatorResults {
        nx: g.nx,
        nv: g.nv,
        phase_box: grid.bx,
        inequalities,
        symmetry_defects: sym,
        spectral_gap,
        gap_margin,
        conjugation,
    })
}

/// Defects `‖(T L* T⁻¹ − L_FP) T g‖` at half, full and double resolution.
pub fn conjugation_study(model: &ModelSpec, nx: usize, nv: usize) -> StageResult<ConjugationStudy> {
    let sizes = [(nx / 2).max(16), nx, 2 * nx];
    let nvs = [(nv / 2).max(16), nv, 2 * nv];
    let grids = sizes
        .iter()
        .zip(&nvs)
        .map(|(a, b)| grid_for(model, *a, *b))
        .collect::<StageResult<Vec<_>>>()?;
    let spacing: Vec<f64> = grids.iter().map(|g| g.hx.max(g.hv)).collect();
    let mut probes = Vec::new();
    let mut passed = true;
    for (name, f) in conjugation_probes() {
        let errs = grids
            .iter()
            .map(|g| conjugation_defect(g, &g.sample(f)))
            .collect::<StageResult<Vec<_>>>()?;
        let order = observed_order(&spacing, &errs);
        passed &= order >= CONJUGATION_ORDER;
        probes.push((name.to_string(), errs, order));
    }
    Ok(ConjugationStudy {
        nx: sizes.to_vec(),
        spacing,
        probes,
        passed,
    })
}

fn stage_semigroup(ctx: &mut Ctx, cert: &RateCertificate) -> StageResult<Option<SemigroupResults>> {
    let t = &ctx.cfg.time;
    let fit = FitOptions::default();
    let d = ctx.model.dim;
    let res = if d == 1 {
        let grid = grid_for(&ctx.model, ctx.cfg.grid.nx, ctx.cfg.grid.nv)?;
        let l = assemble(&grid, OperatorKind::L)?;
        let obs: Vec<(String, Vec<f64>)> = vec![
            ("x".into(), grid.sample(|x, _| x)),
            ("v".into(), grid.sample(|_, v| v)),
            ("xv".into(), grid.sample(|x, v| x * v)),
            ("x^2".into(), grid.sample(|x, _| x * x)),
        ];
        let curves = decay_curves(&l, &grid, &obs, t.t_end, t.dt, t.scheme, cert, &fit)?;
        let shift = t.fp_shift;
        let pot = ctx.model.potential.clone();
        let mut rho0 = grid.sample(|x, v| (-(pot.eval(&[x - shift]) - grid.phi_ref) - 0.5 * v * v).exp());
        let mass: f64 = mlangevin_core::operators::pairwise_sum(&rho0) * grid.hx * grid.hv;
        rho0.iter_mut().for_each(|r| *r /= mass);
        let fp = evolve_fokker_planck(&grid, &rho0, t.t_end, t.dt, t.scheme, cert, &fit)?;
        SemigroupResults {
            method: "grid".into(),
            curves,
            fokker_planck: Some(fp),
            oracle_gap: None,
        }
    } else {
        let Ok(o) = OuOracle::from_model(&ctx.model) else {
            return Ok(None);
        };
        let mut curves = Vec::new();
        for k in 0..2 * d {
            let mut c = vec![0.0; 2 * d];
            c[k] = 1.0;
            let label = if k < d { format!("x{}", k + 1) } else { format!("v{}", k - d + 1) };
            curves.push(o.decay_curve(&label, &c, t.t_end, t.dt, cert, &fit)?);
        }
        SemigroupResults {
            method: "ou-oracle".into(),
            curves,
            fokker_planck: None,
            oracle_gap: Some(o.gap()),
        }
    };
    for c in &res.curves {
        ctx.check(c.contraction_holds(), || format!("decay {}: norm increased by {:.3e}", c.label, c.max_wiggle));
        ctx.check(c.envelope_holds(), || format!("decay {}: envelope violated (margin {:.3e})", c.label, c.envelope_margin));
        ctx.check(c.rate_bound_holds(), || format!("decay {}: fitted rate {} below theta2 {}", c.label, c.fitted_rate, c.theta2));
    }
    if let Some(fp) = &res.fokker_planck {
        ctx.check(fp.curve.envelope_holds(), || format!("fokker-planck: envelope violated (margin {:.3e})", fp.curve.envelope_margin));
        ctx.check(fp.mass_conserved(), || format!("fokker-planck: mass drift {:.3e}", fp.max_mass_drift));
        ctx.check(fp.curve.contraction_holds(), || "fokker-planck: distance increased".into());
    }
    Ok(Some(res))
}

fn stage_sde(ctx: &mut Ctx, cert: &RateCertificate) -> StageResult<PathDiagnostics> {
    let s = &ctx.cfg.sde;
    let mut ens = Ensemble::new(&ctx.model, s.n_paths, ctx.cfg.seed, s.integrator, &InitialState::StandardNormal)?;
    ens.burn_in(s.burn_in, s.dt)?;
    let moments = invariant_moment_checks(&ens)?;
    let n_lags = (s.lag_max / s.lag_step).round() as usize;
    let lags: Vec<f64> = (0..=n_lags).map(|k| k as f64 * s.lag_step).collect();
    let mut mixing = ens.mixing_curve(|z| z[0], &lags, s.dt)?;
    mixing.compare(cert);
    let rec = ens.record_covariation(s.covariation_time, s.dt)?;
    let d = ens.dim;
    let mut covariation = Vec::new();
    for i in 0..d {
        for j in i..d {
            covariation.push(quadratic_covariation(&rec, i, j)?);
        }
    }
    let label = if d == 1 { "x" } else { "x1" };
    let diag = PathDiagnostics {
        model: ctx.model.name.clone(),
        n_paths: s.n_paths,
        dt: s.dt,
        seed: ctx.cfg.seed,
        integrator: s.integrator,
        burn_in: ens.burn_in,
        moments,
        covariation,
        effective_sample_size: mixing.ess,
        mixing: vec![(label.to_string(), mixing)],
    };
    ctx.failures.extend(diag.failures().into_iter().map(|f| format!("sde {f}")));
    Ok(diag)
}
