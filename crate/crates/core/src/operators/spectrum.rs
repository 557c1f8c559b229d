use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::assemble::{DiscreteOperator, OperatorKind};
use super::grid::PhaseGrid;
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, RefinedSolver};

/// Largest grid accepted by [`spectral_gap`].
pub const MAX_GAP_NODES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub gap: f64,
    /// Eigenvalue of `−L` realizing the gap.
    pub eigenvalue: (f64, f64),
    pub krylov_dim: usize,
    pub converged: usize,
}

/// Shift used in `(I − τL)⁻¹`.
const TAU: f64 = 1.0;
const TOP_K: usize = 12;

/// Smallest real part among the nonzero eigenvalues of `−L` on the
/// μ-orthogonal complement of constants.
///
/// Shift-invert Arnoldi on `(I − τL)⁻¹`; Ritz values are accepted once they
/// agree to `1e-9` between two consecutive Krylov dimensions.
pub fn spectral_gap(op: &DiscreteOperator, grid: &PhaseGrid) -> Result<f64> {
    Ok(spectral_gap_detail(op, grid)?.gap)
}

pub fn spectral_gap_detail(op: &DiscreteOperator, grid: &PhaseGrid) -> Result<GapEstimate> {
    if !matches!(op.kind, OperatorKind::L | OperatorKind::LStar) {
        return Err(Error::InvalidArgument("spectral gap needs L or L_star".into()));
    }
    if grid.len() > MAX_GAP_NODES {
        return Err(Error::InvalidArgument(format!(
            "grid has {} nodes; spectral gap is limited to {MAX_GAP_NODES}",
            grid.len()
        )));
    }
    // Euclidean coordinates y = W^{1/2} f; constants map to √w
    let (l, d) = op.unitary_form()?;
    let m = CsrMatrix::identity(l.nrows).axpby(1.0, &l, -TAU);
    let solver = RefinedSolver::new(m, 1e-10)?;
    let n = grid.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let deflate = |f: &mut Vec<f64>| {
        let c: f64 = f.iter().zip(&d).map(|(x, s)| x * s).sum();
        f.iter_mut().zip(&d).for_each(|(x, s)| *x -= c * s);
    };

    let max_dim = 160;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_dim + 1);
    let mut h = DMatrix::<f64>::zeros(max_dim + 1, max_dim);
    // deterministic smooth-ish start vector
    let mut q0: Vec<f64> = (0..n)
        .map(|k| {
            let (i, j) = (k % grid.nx(), k / grid.nx());
            let f = (0.37 * i as f64 + 1.0).sin() + (0.23 * j as f64 + 0.5).cos() + grid.x[i] + grid.v[j];
            f * d[k]
        })
        .collect();
    deflate(&mut q0);
    let nrm = dot(&q0, &q0).sqrt();
    q0.iter_mut().for_each(|x| *x /= nrm);
    basis.push(q0);

    let mut prev: Option<Vec<Complex<f64>>> = None;
    let mut dim = 0;
    while dim < max_dim {
        let (mut z, _) = solver.solve(&basis[dim])?;
        deflate(&mut z);
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = dot(&z, q);
                h[(i, dim)] += c;
                z.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let beta = dot(&z, &z).sqrt();
        h[(dim + 1, dim)] = beta;
        dim += 1;
        let breakdown = beta < 1e-13;
        if dim >= 20 && (dim % 10 == 0 || breakdown) {
            let ritz: Vec<Complex<f64>> = top_ritz(&h.view((0, 0), (dim, dim)).into_owned());
            if let Some(p) = &prev {
                let conv: Vec<Complex<f64>> = ritz
                    .iter()
                    .filter(|mu| p.iter().any(|q| (*q - **mu).norm() <= 1e-9 * mu.norm()))
                    .cloned()
                    .collect();
                // the leading value must be converged before trusting others
                if !conv.is_empty() && (ritz[0] - conv[0]).norm() == 0.0 && conv.len() >= TOP_K.min(ritz.len()) / 2 {
                    let best = conv
                        .iter()
                        .map(|mu| (Complex::new(1.0, 0.0) / mu - 1.0) / TAU)
                        .min_by(|a, b| a.re.total_cmp(&b.re))
                        .unwrap();
                    if !(best.re > 0.0) {
                        return Err(Error::Numeric(format!("non-positive spectral gap {}", best.re)));
                    }
                    return Ok(GapEstimate {
                        gap: best.re,
                        eigenvalue: (best.re, best.im),
                        krylov_dim: dim,
                        converged: conv.len(),
                    });
                }
            }
            prev = Some(ritz);
        }
        if breakdown {
            break;
        }
        z.iter_mut().for_each(|x| *x /= beta);
        basis.push(z);
    }
    Err(Error::Numeric(format!(
        "Arnoldi did not converge within Krylov dimension {dim}"
    )))
}

/// Ritz values of the Hessenberg matrix, largest modulus first, at most
/// `TOP_K` of them.
fn top_ritz(h: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = h.complex_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    ev.truncate(TOP_K);
    ev
}

/// All eigenvalues of `−L` by dense Schur decomposition; for validation on
/// small grids.
pub fn dense_spectrum(op: &DiscreteOperator) -> Result<Vec<Complex<f64>>> {
    let m = op.to_csr()?.to_dense() * -1.0;
    let mut ev: Vec<Complex<f64>> = m.complex_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re));
    Ok(ev)
}
