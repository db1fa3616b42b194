//! Structured grid on the strip `(0, L) × (0, d)` and its base operators.
//!
//! Scaling convention: the stiffness matrix is the weak form of `−∇²`, i.e.
//! `vᵀKv` is the discrete Dirichlet energy `∫|∇v|²`, and the mass matrix is
//! the lumped `hx·hy·I`. The nodal 5-point Laplacian is therefore `Mₘ⁻¹K`.

use crate::error::{Error, Result};
use crate::sparse::{BandedLu, CsrMatrix};

/// Geometry and resolution of the strip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub length: f64,
    pub width: f64,
    pub nx: usize,
    pub ny: usize,
}

impl DomainSpec {
    pub fn new(length: f64, width: f64, nx: usize, ny: usize) -> Result<Self> {
        let spec = DomainSpec {
            length,
            width,
            nx,
            ny,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidDomain(format!("length must be positive, got {}", self.length)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidDomain(format!("width must be positive, got {}", self.width)));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidDomain(format!(
                "need nx >= 2 and ny >= 2 for interior nodes, got nx = {}, ny = {}",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.width / self.ny as f64
    }
}

/// A grid edge touching at least one interior node, with its stencil weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Nodes, index maps and assembled operators. Immutable after construction.
///
/// Global node `(i, j)` with `x = i·hx`, `y = j·hy` has index `i·(ny+1) + j`.
/// Interior nodes are numbered with `j` running fastest, which keeps the band
/// of every operator at `O(ny)` on strips.
#[derive(Debug, Clone)]
pub struct Grid {
    spec: DomainSpec,
    hx: f64,
    hy: f64,
    coords: Vec<(f64, f64)>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    interior_index: Vec<Option<usize>>,
    boundary_index: Vec<Option<usize>>,
    edges: Vec<Edge>,
    stiffness: CsrMatrix,
    stiffness_lu: BandedLu,
    dx: CsrMatrix,
    dy: CsrMatrix,
}

/// Builds the grid and assembles `K`, `Dx` and `Dy`.
pub fn build_grid(spec: &DomainSpec) -> Result<Grid> {
    spec.validate()?;
    let (nx, ny) = (spec.nx, spec.ny);
    let (hx, hy) = (spec.hx(), spec.hy());
    let node = |i: usize, j: usize| i * (ny + 1) + j;
    let n_all = (nx + 1) * (ny + 1);

    let mut coords = Vec::with_capacity(n_all);
    for i in 0..=nx {
        for j in 0..=ny {
            // Pin the far edges to the exact extents.
            let x = if i == nx { spec.length } else { i as f64 * hx };
            let y = if j == ny { spec.width } else { j as f64 * hy };
            coords.push((x, y));
        }
    }

    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let mut interior_index = vec![None; n_all];
    let mut boundary_index = vec![None; n_all];
    for i in 0..=nx {
        for j in 0..=ny {
            let g = node(i, j);
            if i == 0 || i == nx || j == 0 || j == ny {
                boundary_index[g] = Some(boundary.len());
                boundary.push(g);
            } else {
                interior_index[g] = Some(interior.len());
                interior.push(g);
            }
        }
    }

    let wx = hy / hx;
    let wy = hx / hy;
    let mut edges = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            let g = node(i, j);
            if i < nx {
                let h = node(i + 1, j);
                if interior_index[g].is_some() || interior_index[h].is_some() {
                    edges.push(Edge { a: g, b: h, weight: wx });
                }
            }
            if j < ny {
                let h = node(i, j + 1);
                if interior_index[g].is_some() || interior_index[h].is_some() {
                    edges.push(Edge { a: g, b: h, weight: wy });
                }
            }
        }
    }

    let n_int = interior.len();
    let mut triplets = Vec::with_capacity(5 * n_int);
    for e in &edges {
        let (ia, ib) = (interior_index[e.a], interior_index[e.b]);
        if let Some(ka) = ia {
            triplets.push((ka, ka, e.weight));
        }
        if let Some(kb) = ib {
            triplets.push((kb, kb, e.weight));
        }
        if let (Some(ka), Some(kb)) = (ia, ib) {
            triplets.push((ka, kb, -e.weight));
            triplets.push((kb, ka, -e.weight));
        }
    }
    let stiffness = CsrMatrix::from_triplets(n_int, n_int, &triplets);
    let stiffness_lu = BandedLu::factor(&stiffness)?;

    let mut tdx = Vec::with_capacity(2 * n_all);
    let mut tdy = Vec::with_capacity(2 * n_all);
    for i in 0..=nx {
        for j in 0..=ny {
            let g = node(i, j);
            let (lo, hi, span) = match i {
                0 => (node(0, j), node(1, j), hx),
                _ if i == nx => (node(nx - 1, j), node(nx, j), hx),
                _ => (node(i - 1, j), node(i + 1, j), 2.0 * hx),
            };
            tdx.push((g, hi, 1.0 / span));
            tdx.push((g, lo, -1.0 / span));
            let (lo, hi, span) = match j {
                0 => (node(i, 0), node(i, 1), hy),
                _ if j == ny => (node(i, ny - 1), node(i, ny), hy),
                _ => (node(i, j - 1), node(i, j + 1), 2.0 * hy),
            };
            tdy.push((g, hi, 1.0 / span));
            tdy.push((g, lo, -1.0 / span));
        }
    }

    Ok(Grid {
        spec: *spec,
        hx,
        hy,
        coords,
        interior,
        boundary,
        interior_index,
        boundary_index,
        edges,
        stiffness,
        stiffness_lu,
        dx: CsrMatrix::from_triplets(n_all, n_all, &tdx),
        dy: CsrMatrix::from_triplets(n_all, n_all, &tdy),
    })
}

impl Grid {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn width(&self) -> f64 {
        self.spec.width
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn num_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// Coordinates of every node, in global order.
    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Global indices of interior nodes, in interior order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Global indices of boundary nodes, in boundary order.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior_index(&self, global: usize) -> Option<usize> {
        self.interior_index[global]
    }

    pub fn boundary_index(&self, global: usize) -> Option<usize> {
        self.boundary_index[global]
    }

    /// Edges incident to at least one interior node.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Stiffness `K` on interior nodes.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Lumped mass weight: `Mₘ = cell_measure · I`.
    pub fn cell_measure(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        let w = self.cell_measure();
        v.iter().map(|x| w * x).collect()
    }

    pub fn stiffness_apply(&self, v: &[f64]) -> Vec<f64> {
        self.stiffness.mul_vec(v)
    }

    /// `K⁻¹ b` on interior nodes.
    pub fn stiffness_solve(&self, b: &[f64]) -> Vec<f64> {
        self.stiffness_lu.solve(b)
    }

    /// Centered x-derivative on all nodes (one-sided on the boundary).
    pub fn dx(&self) -> &CsrMatrix {
        &self.dx
    }

    /// Centered y-derivative on all nodes (one-sided on the boundary).
    pub fn dy(&self) -> &CsrMatrix {
        &self.dy
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.coords.iter().map(|&(x, y)| f(x, y)).collect()
    }

    pub fn sample_interior(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.interior
            .iter()
            .map(|&g| {
                let (x, y) = self.coords[g];
                f(x, y)
            })
            .collect()
    }

    pub fn sample_boundary(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.boundary
            .iter()
            .map(|&g| {
                let (x, y) = self.coords[g];
                f(x, y)
            })
            .collect()
    }

    /// Restriction of a full nodal field to interior nodes.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&g| full[g]).collect()
    }

    /// Extension by zero of an interior field to all nodes.
    pub fn extend_by_zero(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (&g, &v) in self.interior.iter().zip(interior) {
            full[g] = v;
        }
        full
    }

    /// `Σ_cells` Dirichlet energy of a full nodal field; boundary edges
    /// carry half weight. Equals `vᵀKv` when the field vanishes on ∂Ω.
    pub fn dirichlet_energy(&self, full: &[f64]) -> f64 {
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        let node = |i: usize, j: usize| i * (ny + 1) + j;
        let wx = 0.5 * self.hy / self.hx;
        let wy = 0.5 * self.hx / self.hy;
        let mut e = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1));
                e += wx * ((full[b] - full[a]).powi(2) + (full[d] - full[c]).powi(2));
                e += wy * ((full[c] - full[a]).powi(2) + (full[d] - full[b]).powi(2));
            }
        }
        e
    }

    pub(crate) fn check_interior_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.num_interior() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.num_interior(),
                got: len,
            });
        }
        Ok(())
    }

    pub(crate) fn check_full_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.num_nodes() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.num_nodes(),
                got: len,
            });
        }
        Ok(())
    }
}

/// Discrete harmonic extension of boundary samples to a full nodal field.
///
/// The trace is shifted by its mean before the interior solve, so constant
/// traces are reproduced without rounding.
pub fn lift_boundary(grid: &Grid, trace: &[f64]) -> Result<Vec<f64>> {
    if trace.len() != grid.num_boundary() {
        return Err(Error::DimensionMismatch {
            what: "boundary trace",
            expected: grid.num_boundary(),
            got: trace.len(),
        });
    }
    let shift = trace.iter().sum::<f64>() / trace.len() as f64;
    let mut full = vec![0.0; grid.num_nodes()];
    for (&g, &t) in grid.boundary.iter().zip(trace) {
        full[g] = t - shift;
    }

    let mut rhs = vec![0.0; grid.num_interior()];
    for e in grid.edges() {
        match (grid.interior_index[e.a], grid.interior_index[e.b]) {
            (Some(ka), None) => rhs[ka] += e.weight * full[e.b],
            (None, Some(kb)) => rhs[kb] += e.weight * full[e.a],
            _ => {}
        }
    }
    let values = grid.stiffness_solve(&rhs);
    for (&g, v) in grid.interior.iter().zip(values) {
        full[g] = v;
    }
    for v in &mut full {
        *v += shift;
    }
    // Boundary values must match the trace exactly, not up to the shift round trip.
    for (&g, &t) in grid.boundary.iter().zip(trace) {
        full[g] = t;
    }
    Ok(full)
}
