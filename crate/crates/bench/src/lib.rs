//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use mlangevin_core::{assemble, build_grid, builtin, DiscreteOperator, ModelSpec, OperatorKind, PhaseGrid};

pub fn model(name: &str) -> ModelSpec {
    builtin(name, &BTreeMap::new()).expect("built-in model")
}

/// Grid and assembled generator for a built-in model at `n × n`.
pub fn generator(name: &str, n: usize) -> (PhaseGrid, DiscreteOperator) {
    let grid = build_grid(&model(name), n, n, None).expect("grid");
    let l = assemble(&grid, OperatorKind::L).expect("generator");
    (grid, l)
}
