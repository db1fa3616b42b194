//! Euler–Newton continuation of `F(h, λ) = 0` from `λ = 0` to `λ = 1`.

use crate::error::{Error, Result};
use crate::linsolve::{inv_laplacian_nodal, solve_contraction, DirectSolver};
use crate::mesh::Grid;
use crate::sparse::BandedLu;
use crate::system::{
    f_lambda, fields, jacobian_assemble, norm_g, norm_h, residual, BlockState, Coefficients, DualResidual,
    HomotopyParam,
};

/// How the corrector and predictor solve `F_h h′ = g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    Direct,
    Contraction { tol: f64, maxit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    /// Number of uniform `λ` increments.
    pub steps: usize,
    /// Corrector tolerance on `‖F‖_𝓖`.
    pub newton_tol: f64,
    pub newton_maxit: usize,
    pub linear_solver: LinearSolver,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            steps: 10,
            newton_tol: 1e-10,
            newton_maxit: 20,
            linear_solver: LinearSolver::Direct,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("newton_tol must be positive, got {}", self.newton_tol)));
        }
        if self.newton_maxit == 0 {
            return Err(Error::InvalidParameter("newton_maxit must be >= 1".into()));
        }
        if let LinearSolver::Contraction { tol, maxit } = self.linear_solver {
            if !(tol > 0.0) || maxit == 0 {
                return Err(Error::InvalidParameter("contraction solver needs tol > 0 and maxit >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Solves `F_h(h, λ) h′ = g` with the configured solver.
pub fn solve_linear(
    grid: &Grid,
    coeffs: &Coefficients,
    h: &BlockState,
    lambda: HomotopyParam,
    g: &DualResidual,
    solver: LinearSolver,
) -> Result<BlockState> {
    match solver {
        LinearSolver::Direct => DirectSolver::new(&jacobian_assemble(grid, coeffs, h, lambda)?)?.solve(g),
        LinearSolver::Contraction { tol, maxit } => {
            solve_contraction(grid, coeffs, h, lambda, g, tol, maxit).map(|(x, _)| x)
        }
    }
}

fn wrap(equation: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::EquationSolve {
        equation,
        source: Box::new(e),
    }
}

/// The decoupled `λ = 0` solution: a Poisson solve for `ρ`, then the two
/// linear carrier equations with `u = ρ + a_u` frozen.
pub fn solve_lambda0(grid: &Grid, coeffs: &Coefficients) -> Result<BlockState> {
    coeffs.validate(grid)?;
    let zero = HomotopyParam::new(0.0)?;
    let m = grid.num_interior();
    let mut h = BlockState::zeros(m);

    // g₁ is affine in ρ alone with slope Mₘ⁻¹K.
    let g = residual(grid, coeffs, &h, zero)?;
    h.rho = inv_laplacian_nodal(grid, &g.g1).map_err(wrap(1))?;
    h.rho.iter_mut().for_each(|v| *v = -*v);

    // With ρ fixed, g₂ is affine in σ and g₃ in τ.
    let g = residual(grid, coeffs, &h, zero)?;
    let jac = jacobian_assemble(grid, coeffs, &h, zero)?;
    let carrier = |block: usize, rhs: &[f64]| -> Result<Vec<f64>> {
        let lu = BandedLu::factor(&jac.block(block, block)).map_err(wrap(block + 1))?;
        Ok(lu.solve(rhs).into_iter().map(|v| -v).collect())
    };
    h.sigma = carrier(1, &g.g2)?;
    h.tau = carrier(2, &g.g3)?;
    Ok(h)
}

/// `h + Δλ·ḣ` with `F_h(h, λ) ḣ = −F_λ(h)`.
pub fn euler_predict(
    grid: &Grid,
    coeffs: &Coefficients,
    h: &BlockState,
    lambda: f64,
    dlambda: f64,
    solver: LinearSolver,
) -> Result<BlockState> {
    if !(dlambda >= 0.0) || lambda + dlambda > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "predictor step {dlambda} from lambda = {lambda} leaves [0, 1]"
        )));
    }
    if dlambda == 0.0 {
        return Ok(h.clone());
    }
    let fl = f_lambda(grid, coeffs, h)?;
    if fl.components().iter().all(|c| c.iter().all(|&v| v == 0.0)) {
        return Ok(h.clone());
    }
    let tangent = solve_linear(grid, coeffs, h, HomotopyParam::new(lambda)?, &fl, solver)?;
    Ok(h.axpy(-dlambda, &tangent))
}

/// Result of a Newton correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub state: BlockState,
    pub iterations: usize,
    /// `‖F‖_𝓖` before each iteration and after the last one.
    pub residuals: Vec<f64>,
}

/// Full Newton with the exact Jacobian until `‖F(h, λ)‖_𝓖 ≤ newton_tol`.
pub fn newton_correct(
    grid: &Grid,
    coeffs: &Coefficients,
    h_init: &BlockState,
    lambda: f64,
    cfg: &TraceConfig,
) -> Result<Correction> {
    cfg.validate()?;
    let lam = HomotopyParam::new(lambda)?;
    let mut h = h_init.clone();
    let mut f = residual(grid, coeffs, &h, lam)?;
    let mut residuals = vec![norm_g(grid, &f)?];
    for it in 0..cfg.newton_maxit {
        let last = *residuals.last().expect("nonempty");
        if last <= cfg.newton_tol {
            return Ok(Correction {
                state: h,
                iterations: it,
                residuals,
            });
        }
        if !last.is_finite() {
            break;
        }
        let step = solve_linear(grid, coeffs, &h, lam, &f, cfg.linear_solver)?;
        h = h.sub(&step);
        f = residual(grid, coeffs, &h, lam)?;
        residuals.push(norm_g(grid, &f)?);
    }
    let last = *residuals.last().expect("nonempty");
    if last <= cfg.newton_tol {
        return Ok(Correction {
            state: h,
            iterations: cfg.newton_maxit,
            residuals,
        });
    }
    Err(Error::NewtonFailed {
        lambda,
        iterations: residuals.len() - 1,
        residual: last,
    })
}

/// Sign diagnostics for the carrier densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonnegativity {
    pub min_n: f64,
    pub min_p: f64,
    /// `‖n⁻‖_{H¹₀}` with `n⁻ = min(n, 0)` nodally.
    pub neg_part_norm_n: f64,
    pub neg_part_norm_p: f64,
}

pub fn check_nonnegativity(grid: &Grid, coeffs: &Coefficients, state: &BlockState) -> Nonnegativity {
    let f = fields(grid, coeffs, state);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let neg = |v: &[f64]| {
        let part: Vec<f64> = v.iter().map(|&x| x.min(0.0)).collect();
        grid.dirichlet_energy(&part).max(0.0).sqrt()
    };
    Nonnegativity {
        min_n: min(&f.n),
        min_p: min(&f.p),
        neg_part_norm_n: neg(&f.n),
        neg_part_norm_p: neg(&f.p),
    }
}

/// One accepted point of the discrete solution curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub state: BlockState,
    pub residual_norm: f64,
    pub dist_to_h0: f64,
    pub newton_iters: usize,
    pub min_n: f64,
    pub min_p: f64,
    pub neg_part_norm_n: f64,
    pub neg_part_norm_p: f64,
}

/// Accepted points and, if the trace stopped early, why.
#[derive(Debug)]
pub struct Trace {
    pub points: Vec<CurvePoint>,
    pub failure: Option<Error>,
}

impl Trace {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn terminus(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

fn curve_point(
    grid: &Grid,
    coeffs: &Coefficients,
    h0: &BlockState,
    lambda: f64,
    state: BlockState,
    newton_iters: usize,
) -> Result<CurvePoint> {
    let residual_norm = norm_g(grid, &residual(grid, coeffs, &state, HomotopyParam::new(lambda)?)?)?;
    let dist_to_h0 = norm_h(grid, &state.sub(h0))?;
    let sign = check_nonnegativity(grid, coeffs, &state);
    Ok(CurvePoint {
        lambda,
        state,
        residual_norm,
        dist_to_h0,
        newton_iters,
        min_n: sign.min_n,
        min_p: sign.min_p,
        neg_part_norm_n: sign.neg_part_norm_n,
        neg_part_norm_p: sign.neg_part_norm_p,
    })
}

/// Traces the curve at `λ = k/steps`, `k = 0..=steps`.
///
/// Configuration and `λ = 0` errors are returned directly; a corrector or
/// predictor failure further along ends the trace and is recorded in
/// [`Trace::failure`] next to the points accepted so far.
pub fn trace_curve(grid: &Grid, coeffs: &Coefficients, cfg: &TraceConfig) -> Result<Trace> {
    cfg.validate()?;
    let h0 = solve_lambda0(grid, coeffs)?;
    let mut points = vec![curve_point(grid, coeffs, &h0, 0.0, h0.clone(), 0)?];
    for k in 1..=cfg.steps {
        let prev = points.last().expect("nonempty");
        let lambda = k as f64 / cfg.steps as f64;
        let step = euler_predict(grid, coeffs, &prev.state, prev.lambda, lambda - prev.lambda, cfg.linear_solver)
            .and_then(|pred| newton_correct(grid, coeffs, &pred, lambda, cfg))
            .and_then(|c| curve_point(grid, coeffs, &h0, lambda, c.state, c.iterations));
        match step {
            Ok(p) => points.push(p),
            Err(e) => {
                return Ok(Trace {
                    points,
                    failure: Some(e),
                })
            }
        }
    }
    Ok(Trace { points, failure: None })
}
