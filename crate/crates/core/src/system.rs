//! Discrete drift-diffusion map `F(h, λ)` and its derivatives.
//!
//! With `(u, n, p) = (ρ, σ, τ) + (a_u, a_n, a_p)` the three components are
//!
//! ```text
//! F₁ = −∇²u + λ(n − p) − D                        nodal field (L²)
//! F₂[φ] = ∫ (d_n ∇n − c_n n ∇u) · ∇φ              dual vector (H⁻¹)
//! F₃[ψ] = ∫ (d_p ∇p + c_p p ∇u) · ∇ψ              dual vector (H⁻¹)
//! ```
//!
//! The weak pairings use edge quadrature on the 5-point stencil: every grid
//! edge `e = (a, b)` with weight `w_e` carries the flux
//! `w_e [d (c_a − c_b) ∓ k c̄_e (u_a − u_b)]` with `c̄_e` the edge average.
//! The diffusion part is then exactly `K`, and `F` stays quadratic in the
//! state so the assembled Jacobian is the exact derivative.

use crate::error::{Error, Result};
use crate::mesh::Grid;
use crate::sparse::CsrMatrix;

/// Transport constants, permanent charge and boundary extensions.
///
/// `doping`, `a_u`, `a_n`, `a_p` are full nodal fields (all grid nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub d_n: f64,
    pub c_n: f64,
    pub d_p: f64,
    pub c_p: f64,
    pub doping: Vec<f64>,
    pub a_u: Vec<f64>,
    pub a_n: Vec<f64>,
    pub a_p: Vec<f64>,
}

impl Coefficients {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for (name, v) in [("d_n", self.d_n), ("c_n", self.c_n), ("d_p", self.d_p), ("c_p", self.c_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        grid.check_full_len("doping", self.doping.len())?;
        grid.check_full_len("a_u", self.a_u.len())?;
        grid.check_full_len("a_n", self.a_n.len())?;
        grid.check_full_len("a_p", self.a_p.len())?;
        for (name, field) in [
            ("doping", &self.doping),
            ("a_u", &self.a_u),
            ("a_n", &self.a_n),
            ("a_p", &self.a_p),
        ] {
            if field.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} has non-finite nodal values")));
            }
        }
        Ok(())
    }

    pub fn doping_sup(&self) -> f64 {
        sup_norm(&self.doping)
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Element `(ρ, σ, τ)` of the state space: interior corrections with zero trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Element `(g₁, g₂, g₃)` of the residual space. `g₁` is a nodal field on
/// interior nodes; `g₂`, `g₃` are values of functionals on the interior
/// nodal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DualResidual {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
}

macro_rules! block_arith {
    ($ty:ident, $a:ident, $b:ident, $c:ident) => {
        impl $ty {
            pub fn zeros(n: usize) -> Self {
                $ty {
                    $a: vec![0.0; n],
                    $b: vec![0.0; n],
                    $c: vec![0.0; n],
                }
            }

            pub fn len(&self) -> usize {
                self.$a.len()
            }

            pub fn is_empty(&self) -> bool {
                self.$a.is_empty()
            }

            pub fn components(&self) -> [&[f64]; 3] {
                [&self.$a, &self.$b, &self.$c]
            }

            /// Applies `f` entrywise to `self` and `other`.
            pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
                let zip = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| f(*a, *b)).collect();
                $ty {
                    $a: zip(&self.$a, &other.$a),
                    $b: zip(&self.$b, &other.$b),
                    $c: zip(&self.$c, &other.$c),
                }
            }

            pub fn add(&self, other: &Self) -> Self {
                self.zip_map(other, |a, b| a + b)
            }

            pub fn sub(&self, other: &Self) -> Self {
                self.zip_map(other, |a, b| a - b)
            }

            /// `self + alpha · other`.
            pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
                self.zip_map(other, |a, b| a + alpha * b)
            }

            pub fn scale(&self, alpha: f64) -> Self {
                $ty {
                    $a: self.$a.iter().map(|v| alpha * v).collect(),
                    $b: self.$b.iter().map(|v| alpha * v).collect(),
                    $c: self.$c.iter().map(|v| alpha * v).collect(),
                }
            }

            /// Interleaved vector `[x₀⁽¹⁾, x₀⁽²⁾, x₀⁽³⁾, x₁⁽¹⁾, …]`.
            pub fn to_interleaved(&self) -> Vec<f64> {
                let mut out = Vec::with_capacity(3 * self.len());
                for k in 0..self.len() {
                    out.extend([self.$a[k], self.$b[k], self.$c[k]]);
                }
                out
            }

            pub fn from_interleaved(v: &[f64]) -> Self {
                let n = v.len() / 3;
                $ty {
                    $a: (0..n).map(|k| v[3 * k]).collect(),
                    $b: (0..n).map(|k| v[3 * k + 1]).collect(),
                    $c: (0..n).map(|k| v[3 * k + 2]).collect(),
                }
            }

            /// Block vector `[x⁽¹⁾; x⁽²⁾; x⁽³⁾]`.
            pub fn to_stacked(&self) -> Vec<f64> {
                let mut out = self.$a.clone();
                out.extend_from_slice(&self.$b);
                out.extend_from_slice(&self.$c);
                out
            }

            pub fn from_stacked(v: &[f64]) -> Self {
                let n = v.len() / 3;
                $ty {
                    $a: v[..n].to_vec(),
                    $b: v[n..2 * n].to_vec(),
                    $c: v[2 * n..].to_vec(),
                }
            }
        }
    };
}

block_arith!(BlockState, rho, sigma, tau);
block_arith!(DualResidual, g1, g2, g3);

impl BlockState {
    fn check(&self, grid: &Grid) -> Result<()> {
        grid.check_interior_len("rho", self.rho.len())?;
        grid.check_interior_len("sigma", self.sigma.len())?;
        grid.check_interior_len("tau", self.tau.len())
    }
}

impl DualResidual {
    fn check(&self, grid: &Grid) -> Result<()> {
        grid.check_interior_len("g1", self.g1.len())?;
        grid.check_interior_len("g2", self.g2.len())?;
        grid.check_interior_len("g3", self.g3.len())
    }
}

/// Homotopy parameter `λ ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HomotopyParam(f64);

impl HomotopyParam {
    pub fn new(lambda: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(HomotopyParam(lambda))
        } else {
            Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {lambda}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Full nodal fields `u`, `n`, `p` for a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Fields {
    pub u: Vec<f64>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn fields(grid: &Grid, coeffs: &Coefficients, h: &BlockState) -> Fields {
    let lift = |corr: &[f64], base: &[f64]| {
        let mut full = base.to_vec();
        for (&g, &v) in grid.interior_nodes().iter().zip(corr) {
            full[g] += v;
        }
        full
    };
    Fields {
        u: lift(&h.rho, &coeffs.a_u),
        n: lift(&h.sigma, &coeffs.a_n),
        p: lift(&h.tau, &coeffs.a_p),
    }
}

fn check_inputs(grid: &Grid, coeffs: &Coefficients, h: &BlockState) -> Result<()> {
    grid.check_full_len("doping", coeffs.doping.len())?;
    grid.check_full_len("a_u", coeffs.a_u.len())?;
    grid.check_full_len("a_n", coeffs.a_n.len())?;
    grid.check_full_len("a_p", coeffs.a_p.len())?;
    h.check(grid)
}

/// Scatters an edge flux `f` into `out` with `+f` at `a` and `−f` at `b`.
fn scatter(grid: &Grid, out: &mut [f64], a: usize, b: usize, f: f64) {
    if let Some(ka) = grid.interior_index(a) {
        out[ka] += f;
    }
    if let Some(kb) = grid.interior_index(b) {
        out[kb] -= f;
    }
}

/// `F(h, λ)`.
pub fn residual(grid: &Grid, coeffs: &Coefficients, h: &BlockState, lambda: HomotopyParam) -> Result<DualResidual> {
    check_inputs(grid, coeffs, h)?;
    let Fields { u, n, p } = fields(grid, coeffs, h);
    let m = grid.num_interior();
    let inv_cell = 1.0 / grid.cell_measure();
    let lam = lambda.value();

    let mut lap = vec![0.0; m];
    let mut g2 = vec![0.0; m];
    let mut g3 = vec![0.0; m];
    for e in grid.edges() {
        let (a, b, w) = (e.a, e.b, e.weight);
        let du = u[a] - u[b];
        scatter(grid, &mut lap, a, b, w * du);
        let n_bar = 0.5 * (n[a] + n[b]);
        let p_bar = 0.5 * (p[a] + p[b]);
        scatter(grid, &mut g2, a, b, w * (coeffs.d_n * (n[a] - n[b]) - coeffs.c_n * n_bar * du));
        scatter(grid, &mut g3, a, b, w * (coeffs.d_p * (p[a] - p[b]) + coeffs.c_p * p_bar * du));
    }
    let g1 = grid
        .interior_nodes()
        .iter()
        .zip(&lap)
        .map(|(&g, l)| inv_cell * l + lam * (n[g] - p[g]) - coeffs.doping[g])
        .collect();
    Ok(DualResidual { g1, g2, g3 })
}

/// `F_h(h, λ) hp`, matrix-free.
pub fn jacobian_apply(
    grid: &Grid,
    coeffs: &Coefficients,
    h: &BlockState,
    lambda: HomotopyParam,
    hp: &BlockState,
) -> Result<DualResidual> {
    check_inputs(grid, coeffs, h)?;
    hp.check(grid)?;
    let Fields { u, n, p } = fields(grid, coeffs, h);
    let rho = grid.extend_by_zero(&hp.rho);
    let sig = grid.extend_by_zero(&hp.sigma);
    let tau = grid.extend_by_zero(&hp.tau);
    let m = grid.num_interior();
    let inv_cell = 1.0 / grid.cell_measure();
    let lam = lambda.value();

    let mut lap = vec![0.0; m];
    let mut j2 = vec![0.0; m];
    let mut j3 = vec![0.0; m];
    for e in grid.edges() {
        let (a, b, w) = (e.a, e.b, e.weight);
        let du = u[a] - u[b];
        let drho = rho[a] - rho[b];
        scatter(grid, &mut lap, a, b, w * drho);
        let flux_n = coeffs.d_n * (sig[a] - sig[b])
            - coeffs.c_n * 0.5 * (sig[a] + sig[b]) * du
            - coeffs.c_n * 0.5 * (n[a] + n[b]) * drho;
        scatter(grid, &mut j2, a, b, w * flux_n);
        let flux_p = coeffs.d_p * (tau[a] - tau[b])
            + coeffs.c_p * 0.5 * (tau[a] + tau[b]) * du
            + coeffs.c_p * 0.5 * (p[a] + p[b]) * drho;
        scatter(grid, &mut j3, a, b, w * flux_p);
    }
    let j1 = (0..m)
        .map(|k| inv_cell * lap[k] + lam * (hp.sigma[k] - hp.tau[k]))
        .collect();
    Ok(DualResidual { g1: j1, g2: j2, g3: j3 })
}

/// `F_λ(h)`: the coefficient of `θ` is `(n − p, 0, 0)`.
pub fn f_lambda(grid: &Grid, coeffs: &Coefficients, h: &BlockState) -> Result<DualResidual> {
    check_inputs(grid, coeffs, h)?;
    let Fields { n, p, .. } = fields(grid, coeffs, h);
    let m = grid.num_interior();
    let g1 = grid.interior_nodes().iter().map(|&g| n[g] - p[g]).collect();
    Ok(DualResidual {
        g1,
        g2: vec![0.0; m],
        g3: vec![0.0; m],
    })
}

/// Assembled `F_h(h, λ)` on interleaved unknowns `3k + c`.
///
/// Rows of the first block are stored multiplied by the cell measure, so
/// every block row is a dual vector and the diagonal blocks share the scale
/// of `K`. [`BlockJacobian::apply`] undoes that scaling.
#[derive(Debug, Clone)]
pub struct BlockJacobian {
    matrix: CsrMatrix,
    cell_measure: f64,
}

impl BlockJacobian {
    /// Interleaved matrix with the first block row scaled by `Mₘ`.
    pub fn scaled_matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn cell_measure(&self) -> f64 {
        self.cell_measure
    }

    pub fn num_interior(&self) -> usize {
        self.matrix.nrows() / 3
    }

    pub fn apply(&self, hp: &BlockState) -> DualResidual {
        let mut out = DualResidual::from_interleaved(&self.matrix.mul_vec(&hp.to_interleaved()));
        for v in &mut out.g1 {
            *v /= self.cell_measure;
        }
        out
    }

    /// Converts a residual into the scaled right-hand side of [`Self::scaled_matrix`].
    pub fn scaled_rhs(&self, g: &DualResidual) -> Vec<f64> {
        let mut scaled = g.clone();
        for v in &mut scaled.g1 {
            *v *= self.cell_measure;
        }
        scaled.to_interleaved()
    }

    /// Block `(row, col)` with `row, col ∈ {0, 1, 2}`, unscaled.
    pub fn block(&self, row: usize, col: usize) -> CsrMatrix {
        let m = self.num_interior();
        let scale = if row == 0 { 1.0 / self.cell_measure } else { 1.0 };
        let mut t = Vec::new();
        for k in 0..m {
            for (j, v) in self.matrix.row(3 * k + row) {
                if j % 3 == col {
                    t.push((k, j / 3, scale * v));
                }
            }
        }
        CsrMatrix::from_triplets(m, m, &t)
    }

    /// Dense unscaled matrix in stacked `[ρ; σ; τ]` ordering.
    pub fn to_dense_stacked(&self) -> Vec<Vec<f64>> {
        let m = self.num_interior();
        let mut dense = vec![vec![0.0; 3 * m]; 3 * m];
        for i in 0..3 * m {
            let (k, c) = (i / 3, i % 3);
            let scale = if c == 0 { 1.0 / self.cell_measure } else { 1.0 };
            for (j, v) in self.matrix.row(i) {
                dense[c * m + k][(j % 3) * m + j / 3] = scale * v;
            }
        }
        dense
    }
}

pub fn jacobian_assemble(
    grid: &Grid,
    coeffs: &Coefficients,
    h: &BlockState,
    lambda: HomotopyParam,
) -> Result<BlockJacobian> {
    check_inputs(grid, coeffs, h)?;
    let Fields { u, n, p } = fields(grid, coeffs, h);
    let cell = grid.cell_measure();
    let lam = lambda.value();
    let m = grid.num_interior();
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(40 * m);

    // Edge flux f_e enters row a with +, row b with −; column entries are
    // the partial derivatives of f_e with respect to interior unknowns.
    let mut push_flux = |a: usize, b: usize, comp: usize, partials: [(usize, usize, f64); 4]| {
        for (row_node, sign) in [(a, 1.0), (b, -1.0)] {
            if let Some(kr) = grid.interior_index(row_node) {
                for &(col_node, col_comp, v) in &partials {
                    if let Some(kc) = grid.interior_index(col_node) {
                        t.push((3 * kr + comp, 3 * kc + col_comp, sign * v));
                    }
                }
            }
        }
    };

    for e in grid.edges() {
        let (a, b, w) = (e.a, e.b, e.weight);
        let du = u[a] - u[b];
        let n_bar = 0.5 * (n[a] + n[b]);
        let p_bar = 0.5 * (p[a] + p[b]);
        push_flux(a, b, 0, [(a, 0, w), (b, 0, -w), (a, 1, 0.0), (b, 1, 0.0)]);
        push_flux(
            a,
            b,
            1,
            [
                (a, 1, w * (coeffs.d_n - 0.5 * coeffs.c_n * du)),
                (b, 1, w * (-coeffs.d_n - 0.5 * coeffs.c_n * du)),
                (a, 0, -w * coeffs.c_n * n_bar),
                (b, 0, w * coeffs.c_n * n_bar),
            ],
        );
        push_flux(
            a,
            b,
            2,
            [
                (a, 2, w * (coeffs.d_p + 0.5 * coeffs.c_p * du)),
                (b, 2, w * (-coeffs.d_p + 0.5 * coeffs.c_p * du)),
                (a, 0, w * coeffs.c_p * p_bar),
                (b, 0, -w * coeffs.c_p * p_bar),
            ],
        );
    }
    for k in 0..m {
        t.push((3 * k, 3 * k + 1, lam * cell));
        t.push((3 * k, 3 * k + 2, -lam * cell));
    }
    // Zero partials above only shape the pattern; drop them before building.
    t.retain(|&(_, _, v)| v != 0.0);
    Ok(BlockJacobian {
        matrix: CsrMatrix::from_triplets(3 * m, 3 * m, &t),
        cell_measure: cell,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖f‖_{L²}` of an interior nodal field (lumped mass).
pub fn l2_interior(grid: &Grid, f: &[f64]) -> f64 {
    (grid.cell_measure() * dot(f, f)).sqrt()
}

/// `‖f‖_{L²}` of a full nodal field by the trapezoid rule.
pub fn l2_full(grid: &Grid, f: &[f64]) -> f64 {
    let spec = grid.spec();
    let (nx, ny) = (spec.nx, spec.ny);
    let mut sum = 0.0;
    for i in 0..=nx {
        let wi = if i == 0 || i == nx { 0.5 } else { 1.0 };
        for j in 0..=ny {
            let wj = if j == 0 || j == ny { 0.5 } else { 1.0 };
            let v = f[i * (ny + 1) + j];
            sum += wi * wj * v * v;
        }
    }
    (grid.cell_measure() * sum).sqrt()
}

/// `‖σ‖_{H¹₀} = (σᵀKσ)^{1/2}`.
pub fn h1_seminorm(grid: &Grid, v: &[f64]) -> f64 {
    dot(v, &grid.stiffness_apply(v)).max(0.0).sqrt()
}

/// `‖ρ‖_{H²∩H¹₀} = ‖Mₘ⁻¹Kρ‖_{L²}`.
pub fn laplacian_norm(grid: &Grid, v: &[f64]) -> f64 {
    let kv = grid.stiffness_apply(v);
    (dot(&kv, &kv) / grid.cell_measure()).sqrt()
}

/// `‖g‖_{H⁻¹} = (gᵀK⁻¹g)^{1/2}` for a dual vector.
pub fn h_minus1_norm(grid: &Grid, g: &[f64]) -> f64 {
    dot(g, &grid.stiffness_solve(g)).max(0.0).sqrt()
}

pub fn norm_h(grid: &Grid, h: &BlockState) -> Result<f64> {
    h.check(grid)?;
    Ok((laplacian_norm(grid, &h.rho).powi(2)
        + h1_seminorm(grid, &h.sigma).powi(2)
        + h1_seminorm(grid, &h.tau).powi(2))
    .sqrt())
}

pub fn norm_g(grid: &Grid, g: &DualResidual) -> Result<f64> {
    g.check(grid)?;
    Ok((l2_interior(grid, &g.g1).powi(2)
        + h_minus1_norm(grid, &g.g2).powi(2)
        + h_minus1_norm(grid, &g.g3).powi(2))
    .sqrt())
}
