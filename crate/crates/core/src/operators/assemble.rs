use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::PhaseGrid;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Which operator a [`DiscreteOperator`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Generator `S − A` (plus the x-stabilization term).
    L,
    /// Symmetric velocity part `Σ aᵢⱼ∂ᵢⱼ + bᵢ∂ᵢ`.
    S,
    /// Transport part `∇Φ·∇_v − v·∇_x`.
    A,
    /// `G = P A² P`, acting as `f_S″ − Φ′ f_S′`.
    G,
    /// `P f = P_S f − (f, 1)`.
    P,
    /// Velocity average `P_S f = ∫ f dν`.
    PS,
    /// Fokker–Planck operator on densities.
    LFp,
    /// Adjoint generator `S + A` (plus stabilization).
    LStar,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::L => "L",
            OperatorKind::S => "S",
            OperatorKind::A => "A",
            OperatorKind::G => "G",
            OperatorKind::P => "P",
            OperatorKind::PS => "P_S",
            OperatorKind::LFp => "L_FP",
            OperatorKind::LStar => "L_star",
        }
    }
}

/// Coefficient of the x-direction fourth-order dissipation that removes the
/// odd–even decoupled modes of the centred transport stencil.
pub const STABILIZATION: f64 = 0.5;

#[derive(Debug, Clone)]
pub(crate) enum Repr {
    Sparse(CsrMatrix),
    /// `P_S`, optionally minus the mean.
    VelocityAverage { subtract_mean: bool },
}

/// Discretized operator on a [`PhaseGrid`].
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    /// Formal order of the interior stencil.
    pub stencil_order: u32,
    pub(crate) repr: Repr,
    wx: Vec<f64>,
    wv: Vec<f64>,
    w: Vec<f64>,
}

impl DiscreteOperator {
    fn sparse(kind: OperatorKind, grid: &PhaseGrid, m: CsrMatrix) -> Self {
        DiscreteOperator {
            kind,
            stencil_order: 2,
            repr: Repr::Sparse(m),
            wx: grid.wx.clone(),
            wv: grid.wv.clone(),
            w: grid.w.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn matrix(&self) -> Option<&CsrMatrix> {
        match &self.repr {
            Repr::Sparse(m) => Some(m),
            _ => None,
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Sparse(m) => m.matvec(f),
            Repr::VelocityAverage { subtract_mean } => {
                let nx = self.wx.len();
                let mut avg = vec![0.0; nx];
                for (j, wj) in self.wv.iter().enumerate() {
                    for i in 0..nx {
                        avg[i] += wj * f[j * nx + i];
                    }
                }
                if *subtract_mean {
                    let m: f64 = avg.iter().zip(&self.wx).map(|(a, w)| a * w).sum();
                    avg.iter_mut().for_each(|a| *a -= m);
                }
                let mut out = Vec::with_capacity(f.len());
                for _ in 0..self.wv.len() {
                    out.extend_from_slice(&avg);
                }
                out
            }
        }
    }

    /// Explicit sparse form. Projections are materialized, which is
    /// refused when the result would exceed `5·10⁶` entries.
    pub fn to_csr(&self) -> Result<CsrMatrix> {
        match &self.repr {
            Repr::Sparse(m) => Ok(m.clone()),
            Repr::VelocityAverage { subtract_mean } => {
                let nx = self.wx.len();
                let nv = self.wv.len();
                let n = nx * nv;
                let entries = if *subtract_mean { n * n } else { n * nv };
                if entries > 5_000_000 {
                    return Err(Error::InvalidArgument(format!(
                        "materializing {} would need {entries} entries",
                        self.kind.name()
                    )));
                }
                let mut t = Vec::with_capacity(entries);
                for jr in 0..nv {
                    for i in 0..nx {
                        let r = jr * nx + i;
                        for (jc, wj) in self.wv.iter().enumerate() {
                            t.push((r, jc * nx + i, *wj));
                        }
                        if *subtract_mean {
                            for (c, wc) in self.w.iter().enumerate() {
                                t.push((r, c, -wc));
                            }
                        }
                    }
                }
                Ok(CsrMatrix::from_triplets(n, n, t))
            }
        }
    }

    /// Similarity transform `D M D⁻¹` into coordinates where the natural
    /// norm is Euclidean: `D = W^{1/2}` for operators on observables
    /// (`L²(μ)`), `D = ρ̂^{-1/2}` for the Fokker–Planck operator on
    /// densities. Returns the matrix and `D`.
    pub fn unitary_form(&self) -> Result<(CsrMatrix, Vec<f64>)> {
        let m = self.to_csr()?;
        let d: Vec<f64> = match self.kind {
            OperatorKind::LFp => {
                // ρ̂ is proportional to W; the constant factor cancels
                self.w.iter().map(|w| 1.0 / w.sqrt()).collect()
            }
            _ => self.w.iter().map(|w| w.sqrt()).collect(),
        };
        Ok((m.scale_rows(&d).scale_cols(&inv(&d)), d))
    }

    /// Writes the operator in Matrix Market coordinate format.
    pub fn write_matrix_market<W: std::io::Write>(&self, w: W) -> Result<()> {
        self.to_csr()?
            .write_matrix_market(w)
            .map_err(|e| Error::Numeric(format!("matrix export failed: {e}")))
    }
}

/// Weighted flux matrix `W·S` of the velocity operator (symmetric).
fn weighted_s(grid: &PhaseGrid) -> CsrMatrix {
    let (nx, nv) = (grid.nx(), grid.nv());
    let hv = grid.hv;
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..nv - 1)
        .into_par_iter()
        .map(|j| {
            let vm = grid.v[j] + 0.5 * hv;
            let flux = grid.rho_v(vm) * grid.a(vm) / (grid.zv * hv);
            let mut t = Vec::with_capacity(4 * nx);
            for i in 0..nx {
                let d = flux * grid.wx[i];
                let p = grid.index(i, j);
                let q = grid.index(i, j + 1);
                t.extend_from_slice(&[(p, p, -d), (p, q, d), (q, q, -d), (q, p, d)]);
            }
            t
        })
        .collect();
    CsrMatrix::from_triplets(grid.len(), grid.len(), rows.into_iter().flatten().collect())
}

/// Antisymmetric transport matrix `K` built from the stream function
/// `ψ` at cell corners; edge fluxes are differences of `ψ`, so `K1 = 0`.
fn stream_matrix<P: Fn(isize, isize) -> f64 + Sync>(grid: &PhaseGrid, psi: P) -> CsrMatrix {
    let (nx, nv) = (grid.nx(), grid.nv());
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..nv)
        .into_par_iter()
        .map(|j| {
            let mut t = Vec::with_capacity(4 * nx);
            let ji = j as isize;
            for i in 0..nx {
                let k = grid.index(i, j);
                let ic = i as isize;
                if i + 1 < nx {
                    let f = -(psi(ic, ji) - psi(ic, ji - 1));
                    let q = grid.index(i + 1, j);
                    t.push((k, q, 0.5 * f));
                    t.push((q, k, -0.5 * f));
                }
                if j + 1 < nv {
                    let g = psi(ic, ji) - psi(ic - 1, ji);
                    let q = grid.index(i, j + 1);
                    t.push((k, q, 0.5 * g));
                    t.push((q, k, -0.5 * g));
                }
            }
            t
        })
        .collect();
    CsrMatrix::from_triplets(grid.len(), grid.len(), rows.into_iter().flatten().collect())
}

fn weighted_k(grid: &PhaseGrid) -> CsrMatrix {
    let (nx, nv) = (grid.nx() as isize, grid.nv() as isize);
    let c = 1.0 / (grid.zx * grid.zv);
    let hx = grid.hx;
    let hv = grid.hv;
    // corner (i+½, j+½); zero outside the interior corners
    let psi = |ci: isize, cj: isize| -> f64 {
        if ci < 0 || ci >= nx - 1 || cj < 0 || cj >= nv - 1 {
            return 0.0;
        }
        let xc = grid.x[ci as usize] + 0.5 * hx;
        let vc = grid.v[cj as usize] + 0.5 * hv;
        c * grid.rho_x(xc) * grid.rho_v(vc)
    };
    stream_matrix(grid, psi)
}

/// Weighted x-stabilization `W·E = −(κ/h_x) D₂ᵀ Ω D₂` (symmetric,
/// negative semidefinite, annihilates functions affine in x).
fn weighted_e(grid: &PhaseGrid) -> CsrMatrix {
    let (nx, nv) = (grid.nx(), grid.nv());
    let scale = STABILIZATION / grid.hx;
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..nv)
        .into_par_iter()
        .map(|j| {
            let mut t = Vec::with_capacity(9 * nx);
            for i in 1..nx - 1 {
                let om = scale * grid.w[grid.index(i, j)];
                let idx = [grid.index(i - 1, j), grid.index(i, j), grid.index(i + 1, j)];
                let st = [1.0, -2.0, 1.0];
                for a in 0..3 {
                    for b in 0..3 {
                        t.push((idx[a], idx[b], -om * st[a] * st[b]));
                    }
                }
            }
            t
        })
        .collect();
    CsrMatrix::from_triplets(grid.len(), grid.len(), rows.into_iter().flatten().collect())
}

fn inv(w: &[f64]) -> Vec<f64> {
    w.iter().map(|t| 1.0 / t).collect()
}

/// Bernoulli function `z/(eᶻ − 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Fokker–Planck operator on nodal densities: Scharfetter–Gummel fluxes in
/// v (exact for the Gaussian profile), stream-function transport, and the
/// conjugated stabilization so that `T E T⁻¹` matches the generator side.
fn fokker_planck(grid: &PhaseGrid) -> CsrMatrix {
    let (nx, nv) = (grid.nx(), grid.nv());
    let hv = grid.hv;
    let cell = grid.hx * grid.hv;
    // discrete unit-mass density
    let r: Vec<f64> = grid.w.iter().map(|w| w / cell).collect();
    let mut t = Vec::new();
    for j in 0..nv - 1 {
        let vm = grid.v[j] + 0.5 * hv;
        let z = vm * hv;
        let am = 0.5 * (grid.a(grid.v[j]) + grid.a(grid.v[j + 1]));
        let cp = am / (hv * hv) * bernoulli(-z);
        let cm = am / (hv * hv) * bernoulli(z);
        for i in 0..nx {
            let p = grid.index(i, j);
            let q = grid.index(i, j + 1);
            t.extend_from_slice(&[(p, q, cp), (p, p, -cm), (q, q, -cp), (q, p, cm)]);
        }
    }
    let diff = CsrMatrix::from_triplets(grid.len(), grid.len(), t);
    let (nxi, nvi) = (nx as isize, nv as isize);
    let node = |i: usize, j: usize| r[j * nx + i];
    let psi = |ci: isize, cj: isize| -> f64 {
        if ci < 0 || ci >= nxi - 1 || cj < 0 || cj >= nvi - 1 {
            return 0.0;
        }
        let (i, j) = (ci as usize, cj as usize);
        0.25 * (node(i, j) + node(i + 1, j) + node(i, j + 1) + node(i + 1, j + 1)) / cell
    };
    let k = stream_matrix(grid, psi);
    let rinv = inv(&r);
    let transport = k.scale_cols(&rinv);
    let e = weighted_e(grid).scale_rows(&inv(&grid.w));
    let e_fp = e.scale_rows(&r).scale_cols(&rinv);
    diff.axpby(1.0, &transport, -1.0).axpby(1.0, &e_fp, 1.0)
}

/// Macroscopic operator `f ↦ f_S″ − Φ′f_S′` in weighted flux form, applied
/// to the velocity average and lifted back to all nodes.
fn macro_g(grid: &PhaseGrid) -> CsrMatrix {
    let (nx, nv) = (grid.nx(), grid.nv());
    let hx = grid.hx;
    // x-only matrix on the averaged values
    let mut gx = Vec::new();
    for i in 0..nx - 1 {
        let xm = grid.x[i] + 0.5 * hx;
        let flux = grid.rho_x(xm) / (grid.zx * hx);
        let wi = grid.wx[i];
        let wq = grid.wx[i + 1];
        gx.push((i, i, -flux / wi));
        gx.push((i, i + 1, flux / wi));
        gx.push((i + 1, i + 1, -flux / wq));
        gx.push((i + 1, i, flux / wq));
    }
    let gx = CsrMatrix::from_triplets(nx, nx, gx);
    let mut t = Vec::with_capacity(grid.len() * 3 * nv);
    for jr in 0..nv {
        for (i, ic, val) in gx.triplets() {
            for (jc, wj) in grid.wv.iter().enumerate() {
                t.push((grid.index(i, jr), grid.index(ic, jc), val * wj));
            }
        }
    }
    CsrMatrix::from_triplets(grid.len(), grid.len(), t)
}

/// Assembles the requested operator on `grid`.
pub fn assemble(grid: &PhaseGrid, kind: OperatorKind) -> Result<DiscreteOperator> {
    let winv = inv(&grid.w);
    let op = match kind {
        OperatorKind::S => DiscreteOperator::sparse(kind, grid, weighted_s(grid).scale_rows(&winv)),
        OperatorKind::A => {
            let neg: Vec<f64> = winv.iter().map(|t| -t).collect();
            DiscreteOperator::sparse(kind, grid, weighted_k(grid).scale_rows(&neg))
        }
        OperatorKind::L | OperatorKind::LStar => {
            let sign = if kind == OperatorKind::L { 1.0 } else { -1.0 };
            // W L = W S + sign·K + W E, with A = −W⁻¹K
            let wl = weighted_s(grid)
                .axpby(1.0, &weighted_k(grid), sign)
                .axpby(1.0, &weighted_e(grid), 1.0);
            DiscreteOperator::sparse(kind, grid, wl.scale_rows(&winv))
        }
        OperatorKind::LFp => DiscreteOperator::sparse(kind, grid, fokker_planck(grid)),
        OperatorKind::G => DiscreteOperator::sparse(kind, grid, macro_g(grid)),
        OperatorKind::PS | OperatorKind::P => DiscreteOperator {
            kind,
            stencil_order: 0,
            repr: Repr::VelocityAverage {
                subtract_mean: kind == OperatorKind::P,
            },
            wx: grid.wx.clone(),
            wv: grid.wv.clone(),
            w: grid.w.clone(),
        },
    };
    if let Some(m) = op.matrix() {
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("{} entries", kind.name()),
                point: vec![],
            });
        }
    }
    Ok(op)
}

/// Stabilization term alone, `E = W⁻¹·(W·E)`.
pub fn assemble_stabilization(grid: &PhaseGrid) -> CsrMatrix {
    weighted_e(grid).scale_rows(&inv(&grid.w))
}
