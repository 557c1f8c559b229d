//! Experiment configuration, stored as TOML with a `schema` version key.

use std::collections::BTreeMap;

use mlangevin_core::model::builtin;
use mlangevin_core::semigroup::Scheme;
use mlangevin_core::sde::Integrator;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Assumptions,
    Certify,
    Operators,
    Semigroup,
    Sde,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Assumptions, Stage::Certify, Stage::Operators, Stage::Semigroup, Stage::Sde];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Assumptions => "assumptions",
            Stage::Certify => "certify",
            Stage::Operators => "operators",
            Stage::Semigroup => "semigroup",
            Stage::Sde => "sde",
        }
    }

    pub fn parse(s: &str) -> Result<Stage, CliError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| CliError::Config(format!("unknown stage '{s}' (known: assumptions, certify, operators, semigroup, sde)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Constants supplied directly instead of measured by the assumptions stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitConstants {
    pub c_sigma: f64,
    pub n_sigma: f64,
    pub lambda: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateConfig {
    pub theta1: f64,
    pub c_phi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explicit: Option<ExplicitConstants>,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            theta1: 2.0,
            c_phi: 1.0,
            explicit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionConfig {
    pub n_probes: usize,
    pub box_radius: f64,
    pub gh_order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_override: Option<f64>,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        AssumptionConfig {
            n_probes: 10_000,
            box_radius: 10.0,
            gh_order: 200,
            lambda_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub nv: usize,
    /// Random test functions per operator inequality.
    pub n_test_functions: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nx: 64,
            nv: 64,
            n_test_functions: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Position shift of the Gaussian-type initial density.
    pub fp_shift: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t_end: 10.0,
            dt: 0.01,
            scheme: Scheme::CrankNicolson,
            fp_shift: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub burn_in: f64,
    pub integrator: Integrator,
    pub covariation_time: f64,
    pub lag_max: f64,
    pub lag_step: f64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            n_paths: 100_000,
            dt: 0.01,
            burn_in: 20.0,
            integrator: Integrator::EulerMaruyama,
            covariation_time: 1.0,
            lag_max: 10.0,
            lag_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub model: ModelConfig,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub assumptions: AssumptionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub sde: SdeConfig,
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

impl ExperimentConfig {
    /// Defaults for a named model.
    pub fn for_model(name: &str) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            model: ModelConfig {
                name: name.to_string(),
                params: BTreeMap::new(),
            },
            stages: all_stages(),
            seed: 0,
            threads: None,
            out: None,
            certificate: CertificateConfig::default(),
            assumptions: AssumptionConfig::default(),
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            sde: SdeConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if !(self.certificate.theta1 > 1.0) || !self.certificate.theta1.is_finite() {
            return bad(format!("theta1 must be > 1, got {}", self.certificate.theta1));
        }
        if !(self.certificate.c_phi >= 0.0) || !self.certificate.c_phi.is_finite() {
            return bad(format!("c_phi must be >= 0, got {}", self.certificate.c_phi));
        }
        if let Some(e) = &self.certificate.explicit {
            if !(e.c_sigma > 0.0 && e.n_sigma > 0.0 && e.lambda > 0.0) || e.dim == 0 {
                return bad("explicit constants must be positive".into());
            }
        }
        if self.sde.n_paths < 1 {
            return bad("ensemble size must be at least 1".into());
        }
        if let Err(e) = builtin(&self.model.name, &self.model.params) {
            return bad(format!("model: {e}"));
        }
        if self.grid.nx < 16 || self.grid.nv < 16 {
            return bad("grid sizes must be at least 16".into());
        }
        if self.grid.n_test_functions == 0 {
            return bad("n_test_functions must be positive".into());
        }
        for (name, v) in [
            ("time.t_end", self.time.t_end),
            ("time.dt", self.time.dt),
            ("sde.dt", self.sde.dt),
            ("sde.lag_step", self.sde.lag_step),
            ("sde.lag_max", self.sde.lag_max),
            ("sde.covariation_time", self.sde.covariation_time),
            ("assumptions.box_radius", self.assumptions.box_radius),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.sde.burn_in >= 0.0) {
            return bad("sde.burn_in must be nonnegative".into());
        }
        if self.assumptions.n_probes == 0 || self.assumptions.gh_order < 40 {
            return bad("assumptions need n_probes > 0 and gh_order >= 40".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        let mut seen = self.stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stages.len() {
            return bad("duplicate stage".into());
        }
        Ok(())
    }

    /// Requested stages plus their prerequisites, in dependency order.
    pub fn resolved_stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone();
        let needs_cert = s.iter().any(|x| matches!(x, Stage::Operators | Stage::Semigroup | Stage::Sde));
        if needs_cert && !s.contains(&Stage::Certify) {
            s.push(Stage::Certify);
        }
        if s.contains(&Stage::Certify) && self.certificate.explicit.is_none() && !s.contains(&Stage::Assumptions) {
            s.push(Stage::Assumptions);
        }
        s.sort();
        s.dedup();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("schema = 1\n[model]\nname = \"classic\"\n").unwrap();
        assert_eq!(c.stages, Stage::ALL.to_vec());
        assert_eq!(c.certificate.theta1, 2.0);
        assert_eq!(c.certificate.c_phi, 1.0);
        assert_eq!(c.sde.n_paths, 100_000);
    }

    #[test]
    fn rejects_bad_values() {
        let base = "schema = 1\n[model]\nname = \"classic\"\n";
        for extra in [
            "[certificate]\ntheta1 = 0.5\n",
            "[sde]\nn_paths = 0\n",
            "[grid]\nnx = 4\n",
            "[time]\nsurprise = 1\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(&format!("{base}{extra}")), Err(CliError::Config(_))), "{extra}");
        }
        assert!(ExperimentConfig::from_toml("schema = 2\n[model]\nname = \"classic\"\n").is_err());
        assert!(ExperimentConfig::from_toml("schema = 1\n[model]\nname = \"nope\"\n").is_err());
        assert!(ExperimentConfig::from_toml("schema = 1\nstages = [\"certify\", \"certify\"]\n[model]\nname = \"classic\"\n").is_err());
    }

    #[test]
    fn prerequisites_are_added() {
        let mut c = ExperimentConfig::for_model("classic");
        c.stages = vec![Stage::Semigroup];
        assert_eq!(c.resolved_stages(), vec![Stage::Assumptions, Stage::Certify, Stage::Semigroup]);
        c.stages = vec![Stage::Certify];
        c.certificate.explicit = Some(ExplicitConstants {
            c_sigma: 1.0,
            n_sigma: 1.0,
            lambda: 1.0,
            dim: 1,
        });
        assert_eq!(c.resolved_stages(), vec![Stage::Certify]);
        c.stages.clear();
        assert!(c.resolved_stages().is_empty());
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            prop::sample::select(vec!["classic", "bounded-bump", "double-well", "aniso-2d"]),
            prop::collection::vec(prop::sample::select(Stage::ALL.to_vec()), 0..5),
            1.0001f64..50.0,
            0.0f64..5.0,
            16usize..200,
            1usize..1_000_000,
            any::<u64>(),
            prop::option::of(1usize..16),
            prop::option::of(0.1f64..4.0),
        )
            .prop_map(|(name, mut stages, theta1, c_phi, nx, n_paths, seed, threads, a)| {
                stages.sort();
                stages.dedup();
                let mut c = ExperimentConfig::for_model(name);
                if let (Some(a), "classic") = (a, name) {
                    c.model.params.insert("a".into(), a);
                }
                c.stages = stages;
                c.certificate.theta1 = theta1;
                c.certificate.c_phi = c_phi;
                c.grid.nx = nx;
                c.sde.n_paths = n_paths;
                c.seed = seed;
                c.threads = threads;
                c
            })
    }

    proptest! {
        #[test]
        fn toml_round_trip(c in arb_config()) {
            let s1 = c.to_toml().unwrap();
            let parsed = ExperimentConfig::from_toml(&s1).unwrap();
            prop_assert_eq!(&parsed, &c);
            prop_assert_eq!(parsed.to_toml().unwrap(), s1);
        }
    }
}
