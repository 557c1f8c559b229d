use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionField, ModelSpec, Potential};

/// Rectangle `[x_lo, x_hi] × [v_lo, v_hi]` in phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBox {
    pub x: (f64, f64),
    pub v: (f64, f64),
}

impl PhaseBox {
    pub fn symmetric(rx: f64, rv: f64) -> Self {
        PhaseBox {
            x: (-rx, rx),
            v: (-rv, rv),
        }
    }
}

/// Default half-width of the box in each direction.
pub const DEFAULT_HALF_WIDTH: f64 = 8.0;
/// `Φ − min Φ` at which the default x-range is cut for steep potentials.
pub const X_CUT_LEVEL: f64 = 60.0;
/// The x-range must contain the sublevel set at this height.
pub const X_COVER_LEVEL: f64 = 30.0;
/// The v-range must contain `[−V_COVER, V_COVER]`.
pub const V_COVER: f64 = 6.0;

/// Default box: `[−8, 8]` in v; in x, `[−8, 8]` or the symmetric interval
/// on which `Φ − min Φ ≤ 60`, whichever is smaller. Steep potentials would
/// otherwise underflow `e^{−Φ}` at the edge.
pub fn default_box(potential: &Potential) -> Result<PhaseBox> {
    let rx = potential.support_radius(X_CUT_LEVEL, DEFAULT_HALF_WIDTH)?;
    Ok(PhaseBox::symmetric(rx, DEFAULT_HALF_WIDTH))
}

/// Uniform tensor grid on a phase box with weights for `μ = e^{−Φ}dx ⊗ ν`.
///
/// Nodes are ordered v-major: index `k = j·nx + i` for `(x_i, v_j)`.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub hx: f64,
    pub hv: f64,
    /// Normalized x-weights: `ρ_x(x_i) h_x / Z_x`.
    pub wx: Vec<f64>,
    /// Normalized v-weights: `ρ_v(v_j) h_v / Z_v`.
    pub wv: Vec<f64>,
    /// Product weights `wx ⊗ wv` in node order.
    pub w: Vec<f64>,
    pub bx: PhaseBox,
    /// Reference level subtracted from `Φ` before exponentiating.
    pub phi_ref: f64,
    /// `Z_x = Σ ρ_x(x_i) h_x` with `ρ_x = e^{−(Φ−phi_ref)}`.
    pub zx: f64,
    /// `Z_v = Σ e^{−v_j²/2} h_v`.
    pub zv: f64,
    pub diffusion: DiffusionField,
    pub potential: Potential,
}

impl PhaseGrid {
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nv(&self) -> usize {
        self.v.len()
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    /// Unnormalized x-density relative to the reference level.
    pub fn rho_x(&self, x: f64) -> f64 {
        (-(self.potential.eval(&[x]) - self.phi_ref)).exp()
    }

    pub fn rho_v(&self, v: f64) -> f64 {
        (-0.5 * v * v).exp()
    }

    /// `Σ a_{ij}` coefficient at velocity `v` (d = 1).
    pub fn a(&self, v: f64) -> f64 {
        self.diffusion.eval_raw(&[v])[(0, 0)]
    }

    /// Samples `f(x, v)` at every node.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &v in &self.v {
            for &x in &self.x {
                out.push(f(x, v));
            }
        }
        out
    }

    /// `(f, g)_μ` by grid quadrature.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        pairwise_sum3(&self.w, f, g)
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// `(f, 1)_μ`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        let ones: Vec<f64> = vec![1.0; f.len()];
        self.inner(f, &ones)
    }

    pub fn centered(&self, f: &[f64]) -> Vec<f64> {
        let m = self.mean(f);
        f.iter().map(|t| t - m).collect()
    }

    /// `(P_S f)(x_i) = Σ_j wv_j f(x_i, v_j)`, one value per x-node.
    pub fn v_average(&self, f: &[f64]) -> Vec<f64> {
        let nx = self.nx();
        let mut out = vec![0.0; nx];
        for (j, wj) in self.wv.iter().enumerate() {
            for i in 0..nx {
                out[i] += wj * f[j * nx + i];
            }
        }
        out
    }

    /// Extends a function of x to all nodes.
    pub fn lift_x(&self, g: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for _ in 0..self.nv() {
            out.extend_from_slice(g);
        }
        out
    }
}

/// Fixed-order pairwise sum of `a·b·c`.
pub(crate) fn pairwise_sum3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    fn rec(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        if a.len() <= 64 {
            let mut s = 0.0;
            for k in 0..a.len() {
                s += a[k] * b[k] * c[k];
            }
            return s;
        }
        let m = a.len() / 2;
        rec(&a[..m], &b[..m], &c[..m]) + rec(&a[m..], &b[m..], &c[m..])
    }
    assert!(a.len() == b.len() && b.len() == c.len());
    rec(a, b, c)
}

/// Fixed-order pairwise sum.
pub fn pairwise_sum(a: &[f64]) -> f64 {
    if a.len() <= 64 {
        return a.iter().sum();
    }
    let m = a.len() / 2;
    pairwise_sum(&a[..m]) + pairwise_sum(&a[m..])
}

fn linspace(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|k| lo + k as f64 * h).collect();
    v[n - 1] = hi;
    (v, h)
}

/// Builds the weighted grid for a one-dimensional model.
pub fn build_grid(model: &ModelSpec, nx: usize, nv: usize, bx: Option<PhaseBox>) -> Result<PhaseGrid> {
    if model.dim != 1 {
        return Err(Error::InvalidArgument(format!(
            "phase-space grids are one-dimensional; model '{}' has d = {}",
            model.name, model.dim
        )));
    }
    if nx < 16 || nv < 16 {
        return Err(Error::InvalidArgument("nx and nv must be at least 16".into()));
    }
    let bx = match bx {
        Some(b) => b,
        None => default_box(&model.potential)?,
    };
    if !(bx.x.0 < bx.x.1 && bx.v.0 < bx.v.1) || ![bx.x.0, bx.x.1, bx.v.0, bx.v.1].iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidArgument(format!("degenerate phase box {bx:?}")));
    }
    if bx.v.0 > -V_COVER || bx.v.1 < V_COVER {
        return Err(Error::InvalidArgument(format!(
            "velocity range {:?} must contain [-{V_COVER}, {V_COVER}]",
            bx.v
        )));
    }
    let cover = model.potential.support_radius(X_COVER_LEVEL, f64::INFINITY)?;
    let cover = cover.min(V_COVER);
    if bx.x.0 > -cover || bx.x.1 < cover {
        return Err(Error::InvalidArgument(format!(
            "position range {:?} must contain [-{cover}, {cover}]",
            bx.x
        )));
    }
    let (x, hx) = linspace(bx.x.0, bx.x.1, nx);
    let (v, hv) = linspace(bx.v.0, bx.v.1, nv);
    let phis: Vec<f64> = x.iter().map(|&t| model.potential.eval(&[t])).collect();
    if let Some(k) = phis.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            what: "potential".into(),
            point: vec![x[k]],
        });
    }
    let phi_ref = phis.iter().cloned().fold(f64::INFINITY, f64::min);
    let rx: Vec<f64> = phis.iter().map(|p| (-(p - phi_ref)).exp()).collect();
    let rv: Vec<f64> = v.iter().map(|t| (-0.5 * t * t).exp()).collect();
    let zx: f64 = rx.iter().sum::<f64>() * hx;
    let zv: f64 = rv.iter().sum::<f64>() * hv;
    let wx: Vec<f64> = rx.iter().map(|r| r * hx / zx).collect();
    let wv: Vec<f64> = rv.iter().map(|r| r * hv / zv).collect();
    if wx.iter().chain(&wv).any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Numeric("grid weights underflow on the chosen box".into()));
    }
    let mut w = Vec::with_capacity(nx * nv);
    for wj in &wv {
        for wi in &wx {
            w.push(wi * wj);
        }
    }
    Ok(PhaseGrid {
        x,
        v,
        hx,
        hv,
        wx,
        wv,
        w,
        bx,
        phi_ref,
        zx,
        zv,
        diffusion: model.diffusion.clone(),
        potential: model.potential.clone(),
    })
}
