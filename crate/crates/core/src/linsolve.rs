//! Solvers for the linearized system `F_h(h, λ) h′ = g`.
//!
//! Two routes: a banded LU of the assembled block Jacobian, and the fixed
//! point iteration `h′ ← 𝒯h′ + (−Δ)⁻¹g̃` preconditioned by the inverse
//! Laplacian, whose step ratios measure the contraction constant of `𝒯`.

use crate::error::{Error, Result};
use crate::mesh::Grid;
use crate::sampling;
use crate::sparse::BandedLu;
use crate::system::{
    fields, jacobian_assemble, norm_g, norm_h, BlockJacobian, BlockState, Coefficients, DualResidual, Fields,
    HomotopyParam,
};

/// `K⁻¹g` for a dual vector `g`.
pub fn inv_laplacian(grid: &Grid, g: &[f64]) -> Result<Vec<f64>> {
    grid.check_interior_len("dual component", g.len())?;
    Ok(grid.stiffness_solve(g))
}

/// `(Mₘ⁻¹K)⁻¹f = K⁻¹Mₘf` for a nodal field `f`.
pub fn inv_laplacian_nodal(grid: &Grid, f: &[f64]) -> Result<Vec<f64>> {
    grid.check_interior_len("nodal component", f.len())?;
    Ok(grid.stiffness_solve(&grid.mass_apply(f)))
}

/// Componentwise `−Δ⁻¹ : 𝓖 → 𝓗`; an isometry in the discrete norms.
pub fn inv_laplacian_block(grid: &Grid, g: &DualResidual) -> Result<BlockState> {
    Ok(BlockState {
        rho: inv_laplacian_nodal(grid, &g.g1)?,
        sigma: inv_laplacian(grid, &g.g2)?,
        tau: inv_laplacian(grid, &g.g3)?,
    })
}

/// Factorized block Jacobian; reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct DirectSolver {
    lu: BandedLu,
    cell_measure: f64,
}

impl DirectSolver {
    pub fn new(jacobian: &BlockJacobian) -> Result<Self> {
        Ok(DirectSolver {
            lu: BandedLu::factor(jacobian.scaled_matrix())?,
            cell_measure: jacobian.cell_measure(),
        })
    }

    pub fn solve(&self, g: &DualResidual) -> Result<BlockState> {
        let m = self.lu.dim() / 3;
        for (what, len) in [("g1", g.g1.len()), ("g2", g.g2.len()), ("g3", g.g3.len())] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: m,
                    got: len,
                });
            }
        }
        let mut scaled = g.clone();
        scaled.g1.iter_mut().for_each(|v| *v *= self.cell_measure);
        Ok(BlockState::from_interleaved(&self.lu.solve(&scaled.to_interleaved())))
    }
}

pub fn solve_direct(jacobian: &BlockJacobian, g: &DualResidual) -> Result<BlockState> {
    DirectSolver::new(jacobian)?.solve(g)
}

/// Outcome of a contraction solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub iterations: usize,
    /// Largest step ratio `‖δₖ₊₁‖/‖δₖ‖` after the warm-up ratio.
    pub contraction_factor: f64,
    /// `‖h′‖_𝓗 / ‖g̃‖_𝓖` for this solve.
    pub inverse_norm_estimate: f64,
}

/// The linear operator `𝒯` at a fixed `(h, λ)`.
pub struct ContractionOperator<'a> {
    grid: &'a Grid,
    coeffs: &'a Coefficients,
    fields: Fields,
    lambda: f64,
}

impl<'a> ContractionOperator<'a> {
    pub fn new(grid: &'a Grid, coeffs: &'a Coefficients, h: &BlockState, lambda: HomotopyParam) -> Result<Self> {
        coeffs.validate(grid)?;
        grid.check_interior_len("rho", h.rho.len())?;
        grid.check_interior_len("sigma", h.sigma.len())?;
        grid.check_interior_len("tau", h.tau.len())?;
        Ok(ContractionOperator {
            grid,
            coeffs,
            fields: fields(grid, coeffs, h),
            lambda: lambda.value(),
        })
    }

    /// `𝒯hp = (λΔ⁻¹(σ′ − τ′), (c_n/d_n)Δ⁻¹∇·(σ′∇u + n∇ρ′), −(c_p/d_p)Δ⁻¹∇·(τ′∇u + p∇ρ′))`.
    pub fn apply(&self, hp: &BlockState) -> Result<BlockState> {
        let grid = self.grid;
        let c = self.coeffs;
        let Fields { u, n, p } = &self.fields;
        let rho = grid.extend_by_zero(&hp.rho);
        let sig = grid.extend_by_zero(&hp.sigma);
        let tau = grid.extend_by_zero(&hp.tau);
        let m = grid.num_interior();

        let mut drift_n = vec![0.0; m];
        let mut drift_p = vec![0.0; m];
        for e in grid.edges() {
            let (a, b, w) = (e.a, e.b, e.weight);
            let du = u[a] - u[b];
            let drho = rho[a] - rho[b];
            let fn_ = -w * c.c_n * (0.5 * (sig[a] + sig[b]) * du + 0.5 * (n[a] + n[b]) * drho);
            let fp = w * c.c_p * (0.5 * (tau[a] + tau[b]) * du + 0.5 * (p[a] + p[b]) * drho);
            for (out, f) in [(&mut drift_n, fn_), (&mut drift_p, fp)] {
                if let Some(ka) = grid.interior_index(a) {
                    out[ka] -= f;
                }
                if let Some(kb) = grid.interior_index(b) {
                    out[kb] += f;
                }
            }
        }
        let diff: Vec<f64> = hp.sigma.iter().zip(&hp.tau).map(|(s, t)| -self.lambda * (s - t)).collect();
        drift_n.iter_mut().for_each(|v| *v /= c.d_n);
        drift_p.iter_mut().for_each(|v| *v /= c.d_p);
        Ok(BlockState {
            rho: inv_laplacian_nodal(grid, &diff)?,
            sigma: inv_laplacian(grid, &drift_n)?,
            tau: inv_laplacian(grid, &drift_p)?,
        })
    }

    /// `g̃`: the residual with its carrier components divided by `d_n`, `d_p`.
    pub fn scaled_residual(&self, g: &DualResidual) -> DualResidual {
        DualResidual {
            g1: g.g1.clone(),
            g2: g.g2.iter().map(|v| v / self.coeffs.d_n).collect(),
            g3: g.g3.iter().map(|v| v / self.coeffs.d_p).collect(),
        }
    }
}

/// Step ratios below this multiple of `ε·‖h‖` are rounding noise and are
/// not used to estimate the contraction factor.
const RATIO_NOISE_FLOOR: f64 = 1e3 * f64::EPSILON;

/// Solves `F_h(h, λ) h′ = g` by fixed-point iteration from `h′ = 0`.
pub fn solve_contraction(
    grid: &Grid,
    coeffs: &Coefficients,
    h: &BlockState,
    lambda: HomotopyParam,
    g: &DualResidual,
    tol: f64,
    maxit: usize,
) -> Result<(BlockState, ContractionReport)> {
    if !(tol > 0.0) || maxit == 0 {
        return Err(Error::InvalidParameter(format!(
            "contraction solve needs tol > 0 and maxit >= 1, got tol = {tol}, maxit = {maxit}"
        )));
    }
    let op = ContractionOperator::new(grid, coeffs, h, lambda)?;
    let g_tilde = op.scaled_residual(g);
    let offset = inv_laplacian_block(grid, &g_tilde)?;
    let g_tilde_norm = norm_g(grid, &g_tilde)?;

    let mut x = BlockState::zeros(grid.num_interior());
    let mut steps: Vec<f64> = Vec::new();
    let mut factor = 0.0f64;
    let mut ratios_seen = 0usize;
    for it in 1..=maxit {
        let next = op.apply(&x)?.add(&offset);
        let step = norm_h(grid, &next.sub(&x))?;
        let size = norm_h(grid, &next)?;
        if let Some(&prev) = steps.last() {
            if prev > RATIO_NOISE_FLOOR * size {
                ratios_seen += 1;
                let ratio = step / prev;
                // The first ratio is warm-up unless it is all we get.
                if ratios_seen > 1 || factor == 0.0 {
                    factor = if ratios_seen == 2 { ratio } else { factor.max(ratio) };
                }
                if ratios_seen > 1 && factor >= 1.0 {
                    return Err(Error::NonConvergence { iterations: it, factor });
                }
            }
        }
        steps.push(step);
        x = next;
        if step <= tol * size {
            let inverse_norm_estimate = if g_tilde_norm > 0.0 { size / g_tilde_norm } else { 0.0 };
            return Ok((
                x,
                ContractionReport {
                    iterations: it,
                    contraction_factor: factor,
                    inverse_norm_estimate,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: maxit,
        factor,
    })
}

/// Largest `‖F_h⁻¹g‖_𝓗` over seeded random probes with `‖g‖_𝓖 = 1`.
///
/// A lower bound on the operator norm of the inverse.
pub fn measure_inverse_norm(
    grid: &Grid,
    coeffs: &Coefficients,
    h: &BlockState,
    lambda: HomotopyParam,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::InvalidParameter("probes must be >= 1".into()));
    }
    let solver = DirectSolver::new(&jacobian_assemble(grid, coeffs, h, lambda)?)?;
    let mut rng = sampling::rng(seed);
    let mut best = 0.0f64;
    for _ in 0..probes {
        let g = sampling::random_unit_dual(grid, &mut rng);
        best = best.max(norm_h(grid, &solver.solve(&g)?)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, lift_boundary, DomainSpec};
    use crate::system::jacobian_apply;
    use std::f64::consts::PI;

    fn strip_coeffs(grid: &Grid) -> Coefficients {
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

    fn lam(v: f64) -> HomotopyParam {
        HomotopyParam::new(v).unwrap()
    }

    #[test]
    fn inverse_laplacian_undoes_stiffness() {
        let grid = build_grid(&DomainSpec::new(1.0, 0.6, 6, 5).unwrap()).unwrap();
        let w: Vec<f64> = (0..grid.num_interior()).map(|k| (0.3 * k as f64).cos()).collect();
        let back = inv_laplacian(&grid, &grid.stiffness_apply(&w)).unwrap();
        for (a, b) in w.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = inv_laplacian(&grid, &vec![0.0; grid.num_interior()]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(inv_laplacian(&grid, &[1.0]).is_err());
    }

    #[test]
    fn inverse_laplacian_of_eigenfunction_is_second_order() {
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let grid = build_grid(&DomainSpec::new(1.0, 1.0, n, n).unwrap()).unwrap();
            let f = grid.sample_interior(|x, y| (PI * x).sin() * (PI * y).sin());
            let rhs: Vec<f64> = grid.mass_apply(&f).iter().map(|v| 2.0 * PI * PI * v).collect();
            let sol = inv_laplacian(&grid, &rhs).unwrap();
            errs.push(sol.iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
        }
        assert!(errs[0] < 0.02, "{errs:?}");
        for w in errs.windows(2) {
            assert!(((w[0] / w[1]).log2() - 2.0).abs() < 0.1, "{errs:?}");
        }
    }

    #[test]
    fn inverse_laplacian_block_is_isometry() {
        let grid = build_grid(&DomainSpec::new(2.0, 0.2, 10, 4).unwrap()).unwrap();
        let mut rng = sampling::rng(3);
        let g = sampling::random_unit_dual(&grid, &mut rng);
        let h = inv_laplacian_block(&grid, &g).unwrap();
        assert!((norm_h(&grid, &h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direct_solve_recovers_known_state() {
        let grid = build_grid(&DomainSpec::new(2.0, 0.1, 12, 4).unwrap()).unwrap();
        let coeffs = strip_coeffs(&grid);
        let mut rng = sampling::rng(11);
        let h = sampling::random_state_in_ball(&grid, &mut rng, 1.0);
        let w = sampling::random_unit_state(&grid, &mut rng);
        let j = jacobian_assemble(&grid, &coeffs, &h, lam(0.6)).unwrap();
        let g = j.apply(&w);
        let x = solve_direct(&j, &g).unwrap();
        let err = norm_h(&grid, &x.sub(&w)).unwrap();
        assert!(err < 1e-10, "err {err}");
        let zero = solve_direct(&j, &DualResidual::zeros(grid.num_interior())).unwrap();
        assert!(zero.to_interleaved().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn contraction_with_zero_rhs_stops_immediately() {
        let grid = build_grid(&DomainSpec::new(2.0, 0.05, 16, 4).unwrap()).unwrap();
        let coeffs = strip_coeffs(&grid);
        let h = BlockState::zeros(grid.num_interior());
        let (x, rep) = solve_contraction(
            &grid,
            &coeffs,
            &h,
            lam(1.0),
            &DualResidual::zeros(grid.num_interior()),
            1e-12,
            50,
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(x.to_interleaved().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn contraction_rejects_bad_parameters() {
        let grid = build_grid(&DomainSpec::new(1.0, 0.1, 4, 4).unwrap()).unwrap();
        let coeffs = strip_coeffs(&grid);
        let h = BlockState::zeros(grid.num_interior());
        let g = DualResidual::zeros(grid.num_interior());
        assert!(solve_contraction(&grid, &coeffs, &h, lam(0.0), &g, 0.0, 10).is_err());
        assert!(solve_contraction(&grid, &coeffs, &h, lam(0.0), &g, 1e-8, 0).is_err());
    }

    #[test]
    fn contraction_operator_is_linear() {
        let grid = build_grid(&DomainSpec::new(2.0, 0.1, 16, 4).unwrap()).unwrap();
        let coeffs = strip_coeffs(&grid);
        let mut rng = sampling::rng(5);
        let h = sampling::random_state_in_ball(&grid, &mut rng, 2.0);
        let op = ContractionOperator::new(&grid, &coeffs, &h, lam(0.8)).unwrap();
        let x = sampling::random_unit_state(&grid, &mut rng);
        let y = sampling::random_unit_state(&grid, &mut rng);
        let alpha = -1.7;
        let lhs = op.apply(&x.scale(alpha).add(&y)).unwrap();
        let rhs = op.apply(&x).unwrap().scale(alpha).add(&op.apply(&y).unwrap());
        let diff = norm_h(&grid, &lhs.sub(&rhs)).unwrap();
        assert!(diff < 1e-12 * norm_h(&grid, &lhs).unwrap().max(1.0), "{diff}");
    }

    #[test]
    fn contraction_fixed_point_solves_linear_system() {
        let grid = build_grid(&DomainSpec::new(2.0, 0.05, 32, 4).unwrap()).unwrap();
        let coeffs = strip_coeffs(&grid);
        let mut rng = sampling::rng(9);
        let h = sampling::random_state_in_ball(&grid, &mut rng, 1.0);
        let g = sampling::random_unit_dual(&grid, &mut rng);
        let tol = 1e-11;
        let (x, rep) = solve_contraction(&grid, &coeffs, &h, lam(1.0), &g, tol, 200).unwrap();
        assert!(rep.contraction_factor < 0.5, "{rep:?}");
        let defect = jacobian_apply(&grid, &coeffs, &h, lam(1.0), &x).unwrap().sub(&g);
        assert!(norm_g(&grid, &defect).unwrap() <= 10.0 * tol * norm_g(&grid, &g).unwrap());
        let direct = solve_direct(&jacobian_assemble(&grid, &coeffs, &h, lam(1.0)).unwrap(), &g).unwrap();
        let gap = norm_h(&grid, &direct.sub(&x)).unwrap();
        assert!(gap <= 10.0 * tol * norm_h(&grid, &direct).unwrap(), "gap {gap}");
    }

    #[test]
    fn inverse_norm_of_decoupled_laplacians_is_one() {
        let grid = build_grid(&DomainSpec::new(1.0, 1.0, 4, 4).unwrap()).unwrap();
        let n = grid.num_nodes();
        let coeffs = Coefficients {
            d_n: 1.0,
            c_n: 1.0,
            d_p: 1.0,
            c_p: 1.0,
            doping: vec![0.0; n],
            a_u: vec![0.0; n],
            a_n: vec![0.0; n],
            a_p: vec![0.0; n],
        };
        let h = BlockState::zeros(grid.num_interior());
        let est = measure_inverse_norm(&grid, &coeffs, &h, lam(0.0), 8, 1).unwrap();
        assert!(est <= 1.0 + 1e-12 && est > 1.0 - 1e-12, "{est}");
        let again = measure_inverse_norm(&grid, &coeffs, &h, lam(0.0), 1, 42).unwrap();
        assert_eq!(again, measure_inverse_norm(&grid, &coeffs, &h, lam(0.0), 1, 42).unwrap());
        assert!(measure_inverse_norm(&grid, &coeffs, &h, lam(0.0), 0, 1).is_err());
    }
}
