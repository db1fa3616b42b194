//! Instances and dense oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use narrow_pnp::mesh::{build_grid, lift_boundary, DomainSpec, Grid};
use narrow_pnp::system::{BlockState, Coefficients};

pub const LENGTH: f64 = 2.0;

pub fn strip(width: f64, nx: usize, ny: usize) -> Grid {
    build_grid(&DomainSpec::new(LENGTH, width, nx, ny).unwrap()).unwrap()
}

pub fn unit_square(n: usize) -> Grid {
    build_grid(&DomainSpec::new(1.0, 1.0, n, n).unwrap()).unwrap()
}

/// Unit coefficients, `D = 0`, `a_u = x/L`, `a_n = a_p = 1 + x/L`.
pub fn reference_coeffs(grid: &Grid) -> Coefficients {
    let len = grid.spec().length;
    let lift = |f: &dyn Fn(f64) -> f64| lift_boundary(grid, &grid.sample_boundary(|x, _| f(x))).unwrap();
    Coefficients {
        d_n: 1.0,
        c_n: 1.0,
        d_p: 1.0,
        c_p: 1.0,
        doping: vec![0.0; grid.num_nodes()],
        a_u: lift(&|x| x / len),
        a_n: lift(&|x| 1.0 + x / len),
        a_p: lift(&|x| 1.0 + x / len),
    }
}

/// `D = 0`, `a_u = 0`, `a_n = a_p = 1`: every `λ` is solved by zero.
pub fn constant_coeffs(grid: &Grid) -> Coefficients {
    let n = grid.num_nodes();
    Coefficients {
        d_n: 1.0,
        c_n: 1.0,
        d_p: 1.0,
        c_p: 1.0,
        doping: vec![0.0; n],
        a_u: vec![0.0; n],
        a_n: vec![1.0; n],
        a_p: vec![1.0; n],
    }
}

/// Dense interior 5-point stiffness built from the stencil directly:
/// `(2/hx² + 2/hy²)·hx·hy` on the diagonal, `−hy/hx` and `−hx/hy` off it.
pub fn dense_stiffness(grid: &Grid) -> DMatrix<f64> {
    let spec = grid.spec();
    let (nx, ny) = (spec.nx, spec.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let (mi, mj) = (nx - 1, ny - 1);
    let idx = |i: usize, j: usize| (i - 1) * mj + (j - 1);
    let mut k = DMatrix::zeros(mi * mj, mi * mj);
    for i in 1..nx {
        for j in 1..ny {
            let r = idx(i, j);
            k[(r, r)] = 2.0 * hy / hx + 2.0 * hx / hy;
            if i > 1 {
                k[(r, idx(i - 1, j))] = -hy / hx;
            }
            if i + 1 < nx {
                k[(r, idx(i + 1, j))] = -hy / hx;
            }
            if j > 1 {
                k[(r, idx(i, j - 1))] = -hx / hy;
            }
            if j + 1 < ny {
                k[(r, idx(i, j + 1))] = -hx / hy;
            }
        }
    }
    k
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Independent dense model of the discrete system on full nodal fields.
pub struct DenseModel {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    lambda: f64,
    coeffs: Coefficients,
}

impl DenseModel {
    pub fn new(grid: &Grid, coeffs: &Coefficients, lambda: f64) -> Self {
        DenseModel {
            nx: grid.spec().nx,
            ny: grid.spec().ny,
            hx: grid.hx(),
            hy: grid.hy(),
            lambda,
            coeffs: coeffs.clone(),
        }
    }

    /// Solution as a correction to the lifts of `grid`.
    pub fn solve_state(&self, grid: &Grid) -> Result<BlockState, String> {
        let [u, n, p] = self.expand(&self.solve()?);
        let c = &self.coeffs;
        let corr = |f: &[f64], a: &[f64]| grid.interior_nodes().iter().map(|&k| f[k] - a[k]).collect();
        Ok(BlockState {
            rho: corr(&u, &c.a_u),
            sigma: corr(&n, &c.a_n),
            tau: corr(&p, &c.a_p),
        })
    }

    fn node(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    fn unknowns(&self) -> usize {
        3 * (self.nx - 1) * (self.ny - 1)
    }

    /// Interior unknowns `[u; n; p]`, `i`-major, into full fields.
    fn expand(&self, x: &DVector<f64>) -> [Vec<f64>; 3] {
        let m = (self.nx - 1) * (self.ny - 1);
        let mut out = [self.coeffs.a_u.clone(), self.coeffs.a_n.clone(), self.coeffs.a_p.clone()];
        for (c, f) in out.iter_mut().enumerate() {
            for i in 1..self.nx {
                for j in 1..self.ny {
                    f[self.node(i, j)] = x[c * m + (i - 1) * (self.ny - 1) + (j - 1)];
                }
            }
        }
        out
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let [u, n, p] = self.expand(x);
        let c = &self.coeffs;
        let m = (self.nx - 1) * (self.ny - 1);
        let mut r = DVector::zeros(3 * m);
        for i in 1..self.nx {
            for j in 1..self.ny {
                let k = self.node(i, j);
                let row = (i - 1) * (self.ny - 1) + (j - 1);
                let nbrs = [
                    (self.node(i - 1, j), self.hy / self.hx),
                    (self.node(i + 1, j), self.hy / self.hx),
                    (self.node(i, j - 1), self.hx / self.hy),
                    (self.node(i, j + 1), self.hx / self.hy),
                ];
                let mut lap = 0.0;
                let mut jn = 0.0;
                let mut jp = 0.0;
                for (q, w) in nbrs {
                    let du = u[k] - u[q];
                    lap += w * du;
                    jn += w * (c.d_n * (n[k] - n[q]) - c.c_n * 0.5 * (n[k] + n[q]) * du);
                    jp += w * (c.d_p * (p[k] - p[q]) + c.c_p * 0.5 * (p[k] + p[q]) * du);
                }
                r[row] = lap / (self.hx * self.hy) + self.lambda * (n[k] - p[k]) - c.doping[k];
                r[m + row] = jn;
                r[2 * m + row] = jp;
            }
        }
        r
    }

    fn fd_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.unknowns();
        let mut jac = DMatrix::zeros(dim, dim);
        let eps = 1e-4;
        for col in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += eps;
            xm[col] -= eps;
            jac.set_column(col, &((self.residual(&xp) - self.residual(&xm)) / (2.0 * eps)));
        }
        jac
    }

    /// Damped Newton from zero interior values.
    pub fn solve(&self) -> Result<DVector<f64>, String> {
        let mut x = DVector::zeros(self.unknowns());
        let mut r = self.residual(&x);
        for _ in 0..100 {
            if r.amax() < 1e-13 {
                return Ok(x);
            }
            let step = self
                .fd_jacobian(&x)
                .lu()
                .solve(&r)
                .ok_or_else(|| "dense Jacobian is singular".to_string())?;
            let mut t = 1.0;
            loop {
                let trial = &x - t * &step;
                let rt = self.residual(&trial);
                if rt.norm() < (1.0 - 1e-4 * t) * r.norm() || t < 1e-6 {
                    x = trial;
                    r = rt;
                    break;
                }
                // Converged to rounding level: a full step no longer reduces r.
                if t == 1.0 && (t * &step).amax() <= 1e-14 * x.amax().max(1.0) {
                    return Ok(x);
                }
                t *= 0.5;
            }
        }
        Err(format!("dense Newton did not converge (residual {:e})", r.amax()))
    }
}

