//! Convergence-rate certificates for kinetic Langevin dynamics with
//! velocity-dependent (multiplicative) noise, and the numerical machinery to
//! test them: discretized generators, semigroup evolution and SDE ensembles.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod assumptions;
pub mod certificate;
pub mod error;
pub mod model;
pub mod operators;
pub mod quadrature;
pub mod sde;
pub mod semigroup;
pub mod sparse;

pub use assumptions::{check_assumptions, AssumptionOptions, AssumptionReport};
pub use certificate::{certify, check_rate_condition, RateCertificate};
pub use error::{Error, Result};
pub use model::{builtin, builtin_models, cholesky_sigma, drift_correction, DiffusionField, ModelSpec, Potential};
pub use operators::{assemble, build_grid, spectral_gap, DiscreteOperator, OperatorKind, PhaseGrid};
pub use semigroup::{decay_curve, evolve, evolve_fokker_planck, DecayCurve, Scheme};
pub use sde::{Ensemble, InitialState, Integrator, PathDiagnostics};
