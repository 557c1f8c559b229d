//! Compressed sparse rows and a banded LU with partial pivoting, sized for
//! phase-space grids whose natural ordering gives bandwidth `nx`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed,
    /// explicit zeros are kept out.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut data: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        };
        m.prune();
        m
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = CsrMatrix::identity(d.len());
        m.data.copy_from_slice(d);
        m.prune();
        m
    }

    fn prune(&mut self) {
        let mut indptr = vec![0; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.data[k] != 0.0 {
                    indices.push(self.indices[k]);
                    data.push(self.data[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.data = data;
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.data[k]))
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            *yr = s;
        }
    }

    pub fn transpose(&self) -> Self {
        CsrMatrix::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(r, c, v)| (c, r, v)).collect(),
        )
    }

    /// `alpha·self + beta·other`.
    pub fn axpby(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let t = self
            .triplets()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(other.triplets().map(|(r, c, v)| (r, c, beta * v)))
            .collect();
        CsrMatrix::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn scale_rows(&self, s: &[f64]) -> Self {
        let mut m = self.clone();
        for r in 0..m.nrows {
            for k in m.indptr[r]..m.indptr[r + 1] {
                m.data[k] *= s[r];
            }
        }
        m
    }

    pub fn scale_cols(&self, s: &[f64]) -> Self {
        let mut m = self.clone();
        for k in 0..m.data.len() {
            m.data[k] *= s[m.indices[k]];
        }
        m
    }

    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let (mid, a) = (self.indices[k], self.data[k]);
                for l in other.indptr[mid]..other.indptr[mid + 1] {
                    t.push((r, other.indices[l], a * other.data[l]));
                }
            }
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, t)
    }

    /// Half-bandwidths `(lower, upper)`.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for (r, c, _) in self.triplets() {
            if c < r {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        (kl, ku)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix Market coordinate format, 1-based, 17 significant digits.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{} {} {:.16e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

/// LU factorization `PA = LU` of a banded matrix, LAPACK `gbtrf` layout.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Dimension("banded LU needs a square matrix".into()));
        }
        let n = a.nrows;
        let (kl, ku) = a.bandwidth();
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            piv: vec![0; n],
        };
        for (r, c, v) in a.triplets() {
            let idx = lu.at(r, c);
            lu.ab[idx] = v;
        }
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.ab[lu.at(k, k)].abs();
            for i in k + 1..=last {
                let v = lu.ab[lu.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Numeric(format!("singular banded matrix at pivot {k}")));
            }
            lu.piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (lu.at(k, j), lu.at(p, j));
                    lu.ab.swap(x, y);
                }
            }
            let pivot = lu.ab[lu.at(k, k)];
            let col = lu.at(k + 1, k).min(lu.ab.len());
            for i in 0..(last - k) {
                lu.ab[col + i] /= pivot;
            }
            for j in k + 1..=jmax {
                let akj = lu.ab[lu.at(k, j)];
                if akj == 0.0 {
                    continue;
                }
                let cj = lu.at(k + 1, j);
                for i in 0..(last - k) {
                    lu.ab[cj + i] -= lu.ab[col + i] * akj;
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                let last = (k + self.kl).min(n - 1);
                for i in k + 1..=last {
                    b[i] -= self.ab[self.at(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let bk = b[k] / self.ab[self.at(k, k)];
            b[k] = bk;
            if bk != 0.0 {
                let first = k.saturating_sub(self.kl + self.ku);
                for i in first..k {
                    b[i] -= self.ab[self.at(i, k)] * bk;
                }
            }
        }
    }
}

/// Direct banded solver with residual-checked iterative refinement.
#[derive(Debug, Clone)]
pub struct RefinedSolver {
    pub matrix: CsrMatrix,
    lu: BandedLu,
    pub tol: f64,
    anorm: f64,
}

/// Diagnostics of the last solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

impl RefinedSolver {
    pub fn new(matrix: CsrMatrix, tol: f64) -> Result<Self> {
        let lu = BandedLu::factor(&matrix)?;
        let anorm = (0..matrix.nrows)
            .map(|i| matrix.data[matrix.indptr[i]..matrix.indptr[i + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(RefinedSolver { matrix, lu, tol, anorm })
    }

    /// Solves `Ax = b`; `tol` bounds the normwise backward error
    /// `‖b − Ax‖ / (‖A‖‖x‖ + ‖b‖)` in the ∞-norm.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let bnorm = inf_norm(b);
        let mut x = b.to_vec();
        self.lu.solve_in_place(&mut x);
        let mut r = vec![0.0; b.len()];
        for it in 0..6 {
            self.matrix.matvec_into(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let rel = inf_norm(&r) / (self.anorm * inf_norm(&x) + bnorm).max(f64::MIN_POSITIVE);
            if !rel.is_finite() {
                break;
            }
            if rel <= self.tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        residual: rel,
                    },
                ));
            }
            self.lu.solve_in_place(&mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
        }
        self.matrix.matvec_into(&x, &mut r);
        let res = r.iter().zip(b).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
        let rel = res / (self.anorm * inf_norm(&x) + bnorm).max(f64::MIN_POSITIVE);
        Err(Error::LinearSolve {
            iterations: 6,
            residual: rel,
        })
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, t| m.max(t.abs()))
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|t| t * t).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = vec![];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                if rng.random_bool(0.7) || i == j {
                    t.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 0.0)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.matvec(&[0.0, 1.0]), vec![3.0, 0.0]);
    }

    #[test]
    fn banded_lu_matches_dense() {
        for (seed, kl, ku) in [(1, 3, 2), (2, 1, 5), (3, 7, 7)] {
            let a = random_banded(60, kl, ku, seed);
            let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let s = RefinedSolver::new(a.clone(), 1e-12).unwrap();
            let (x, _) = s.solve(&b).unwrap();
            let dense = a.to_dense().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
            for i in 0..60 {
                assert!((x[i] - dense[i]).abs() <= 1e-9 * (1.0 + dense[i].abs()));
            }
        }
    }

    #[test]
    fn transpose_and_product() {
        let a = random_banded(20, 2, 3, 9);
        let at = a.transpose();
        assert_eq!(at.to_dense(), a.to_dense().transpose());
        let p = a.matmul(&at);
        assert!((p.to_dense() - a.to_dense() * a.to_dense().transpose()).norm() < 1e-12);
    }

    #[test]
    fn matrix_market_header() {
        let mut buf = vec![];
        CsrMatrix::identity(3).write_matrix_market(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 "));
    }
}
