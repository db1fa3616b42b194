//! Structural properties checked against dense oracles over random instances.

mod common;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use narrow_pnp::bounds::{estimate_lipschitz, sup_f_mu_bound};
use narrow_pnp::linsolve::{solve_contraction, solve_direct};
use narrow_pnp::mesh::{build_grid, lift_boundary, DomainSpec, Grid};
use narrow_pnp::sampling;
use narrow_pnp::system::{
    f_lambda, h1_seminorm, h_minus1_norm, jacobian_assemble, l2_full, l2_interior, norm_g, norm_h, residual,
    BlockState, Coefficients, HomotopyParam,
};
use proptest::prelude::*;

use common::*;

fn grid(length: f64, width: f64, nx: usize, ny: usize) -> Grid {
    build_grid(&DomainSpec::new(length, width, nx, ny).unwrap()).unwrap()
}

fn random_coeffs(g: &Grid, seed: u64) -> Coefficients {
    use rand::Rng;
    let mut rng = sampling::rng(seed);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let (s1, s2, s3, s4) = (r(-1.0, 1.0), r(0.5, 2.0), r(0.5, 2.0), r(-2.0, 2.0));
    let len = g.spec().length;
    let lift = |f: &dyn Fn(f64, f64) -> f64| lift_boundary(g, &g.sample_boundary(f)).unwrap();
    Coefficients {
        d_n: r(0.5, 2.0),
        c_n: r(0.5, 2.0),
        d_p: r(0.5, 2.0),
        c_p: r(0.5, 2.0),
        doping: g.sample(|x, y| s4 * (x / len - 0.5) + y),
        a_u: lift(&|x, _| s1 * x / len),
        a_n: lift(&|x, y| s2 + x / len + y),
        a_p: lift(&|x, _| s3 - 0.25 * x / len),
    }
}

fn stacked_residual(g: &Grid, c: &Coefficients, x: &[f64], l: HomotopyParam) -> DVector<f64> {
    DVector::from_vec(residual(g, c, &BlockState::from_stacked(x), l).unwrap().to_stacked())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stiffness_matches_stencil_and_is_spd(nx in 2usize..9, ny in 2usize..7, len in 0.5f64..3.0, d in 0.02f64..1.0) {
        let g = grid(len, d, nx, ny);
        let dense = dense_stiffness(&g);
        let k = g.stiffness().to_dense();
        for i in 0..g.num_interior() {
            for j in 0..g.num_interior() {
                prop_assert!((k[i][j] - dense[(i, j)]).abs() <= 1e-12 * dense[(i, i)]);
            }
        }
        prop_assert!(dense.clone().cholesky().is_some());
    }

    #[test]
    fn poincare_inequality(nx in 2usize..12, ny in 2usize..7, d in 0.01f64..1.0, seed in 0u64..1000) {
        let g = grid(2.0, d, nx, ny);
        let mut rng = sampling::rng(seed);
        let v = sampling::random_field(&g, &mut rng);
        prop_assert!(l2_interior(&g, &v) <= d / 2f64.sqrt() * h1_seminorm(&g, &v) * (1.0 + 1e-12));
    }

    #[test]
    fn lift_is_linear_and_reproduces_the_trace(nx in 2usize..10, ny in 2usize..6, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        use rand::Rng;
        let g = grid(2.0, 0.3, nx, ny);
        let mut rng = sampling::rng(seed);
        let t1: Vec<f64> = (0..g.num_boundary()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t2: Vec<f64> = (0..g.num_boundary()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
        let (l1, l2, lm) = (lift_boundary(&g, &t1).unwrap(), lift_boundary(&g, &t2).unwrap(), lift_boundary(&g, &mix).unwrap());
        for k in 0..g.num_nodes() {
            prop_assert!((lm[k] - (a * l1[k] + b * l2[k])).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()));
        }
        for (&node, &t) in g.boundary_nodes().iter().zip(&t1) {
            prop_assert_eq!(l1[node], t);
        }
    }

    #[test]
    fn h_minus1_norm_matches_dense_inverse(nx in 2usize..8, ny in 2usize..8, seed in 0u64..1000) {
        let g = grid(1.0, 1.0, nx, ny);
        let kinv = dense_stiffness(&g).try_inverse().unwrap();
        let mut rng = sampling::rng(seed);
        let v = sampling::random_field(&g, &mut rng);
        let dv = dvec(&v);
        let dense = (dv.transpose() * kinv * &dv)[(0, 0)];
        prop_assert!(rel_err(h_minus1_norm(&g, &v).powi(2), dense) <= 1e-10);
    }

    #[test]
    fn f_lambda_obeys_the_uniform_bound(d in 0.01f64..1.0, radius in 0.0f64..10.0, seed in 0u64..1000) {
        let g = grid(2.0, d, 12, 4);
        let c = reference_coeffs(&g);
        let mut rng = sampling::rng(seed);
        let h = sampling::random_state_in_ball(&g, &mut rng, radius);
        let bound = sup_f_mu_bound(l2_full(&g, &c.a_n), l2_full(&g, &c.a_p), d, norm_h(&g, &h).unwrap());
        prop_assert!(norm_g(&g, &f_lambda(&g, &c, &h).unwrap()).unwrap() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn residual_is_exactly_quadratic(seed in 0u64..1000, lambda in 0.0f64..=1.0) {
        // Third differences of a quadratic vanish.
        let g = grid(2.0, 0.2, 6, 4);
        let c = random_coeffs(&g, seed);
        let mut rng = sampling::rng(seed + 1);
        let h = sampling::random_unit_state(&g, &mut rng);
        let dir = sampling::random_unit_state(&g, &mut rng);
        let l = HomotopyParam::new(lambda).unwrap();
        let f = |t: f64| residual(&g, &c, &h.axpy(t, &dir), l).unwrap();
        let third = f(3.0).sub(&f(2.0).scale(3.0)).add(&f(1.0).scale(3.0)).sub(&f(0.0));
        let scale = norm_g(&g, &f(3.0)).unwrap().max(1.0);
        prop_assert!(norm_g(&g, &third).unwrap() <= 1e-11 * scale);
    }
}

#[test]
fn assembled_jacobian_matches_dense_finite_differences() {
    let g = grid(1.0, 1.0, 4, 4);
    for seed in 0..5 {
        let c = random_coeffs(&g, seed);
        let mut rng = sampling::rng(100 + seed);
        let h = sampling::random_unit_state(&g, &mut rng).to_stacked();
        let l = HomotopyParam::new(0.6).unwrap();
        let dim = h.len();
        let eps = 1e-5;
        let mut fd = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let (mut p, mut m) = (h.clone(), h.clone());
            p[col] += eps;
            m[col] -= eps;
            fd.set_column(col, &((stacked_residual(&g, &c, &p, l) - stacked_residual(&g, &c, &m, l)) / (2.0 * eps)));
        }
        let jac = jacobian_assemble(&g, &c, &BlockState::from_stacked(&h), l).unwrap().to_dense_stacked();
        let scale = fd.amax();
        for i in 0..dim {
            for j in 0..dim {
                assert!((jac[i][j] - fd[(i, j)]).abs() < 1e-6 * scale, "entry ({i}, {j})");
            }
        }
    }
}

#[test]
fn direct_solve_matches_dense_solve() {
    let g = grid(1.0, 1.0, 6, 6);
    let c = random_coeffs(&g, 9);
    let mut rng = sampling::rng(10);
    let h = sampling::random_unit_state(&g, &mut rng);
    let l = HomotopyParam::new(1.0).unwrap();
    let jac = jacobian_assemble(&g, &c, &h, l).unwrap();
    let stacked = jac.to_dense_stacked();
    let dense = DMatrix::from_fn(stacked.len(), stacked.len(), |i, j| stacked[i][j]);
    for _ in 0..3 {
        let rhs = sampling::random_unit_dual(&g, &mut rng);
        let x = solve_direct(&jac, &rhs).unwrap().to_stacked();
        let oracle = dense.clone().lu().solve(&DVector::from_vec(rhs.to_stacked())).unwrap();
        let err = (DVector::from_vec(x) - &oracle).amax() / oracle.amax();
        assert!(err < 1e-10, "{err:e}");
    }
}

#[test]
fn contraction_agrees_with_direct_solve_on_narrow_strips() {
    for seed in 0..4 {
        let g = strip(0.02, 24, 4);
        let c = random_coeffs(&g, seed);
        let mut rng = sampling::rng(50 + seed);
        let h = sampling::random_unit_state(&g, &mut rng).scale(0.1);
        let l = HomotopyParam::new(1.0).unwrap();
        let rhs = sampling::random_unit_dual(&g, &mut rng);
        let (x, rep) = solve_contraction(&g, &c, &h, l, &rhs, 1e-13, 500).unwrap();
        let y = solve_direct(&jacobian_assemble(&g, &c, &h, l).unwrap(), &rhs).unwrap();
        assert!(rep.contraction_factor < 0.5);
        assert!(norm_h(&g, &x.sub(&y)).unwrap() <= 1e-10 * norm_h(&g, &y).unwrap());
    }
}

#[test]
fn smallest_laplacian_eigenvalue_on_the_unit_square() {
    let g = unit_square(4);
    let k = dense_stiffness(&g) / g.cell_measure();
    let eig = SymmetricEigen::new(k).eigenvalues.min();
    let exact = 2.0 * std::f64::consts::PI.powi(2);
    assert!(rel_err(eig, exact) < 0.15, "{eig} vs {exact}");
}

#[test]
fn lipschitz_estimate_bounds_sampled_jacobian_differences() {
    // The estimate is a max over samples: re-running the sampler with the
    // same seed on a subset can never exceed it.
    let g = strip(0.1, 16, 4);
    let c = reference_coeffs(&g);
    let full = estimate_lipschitz(&g, &c, 2.0, 100, 4).unwrap();
    let part = estimate_lipschitz(&g, &c, 2.0, 50, 4).unwrap();
    assert!(part <= full && full > 0.0);
}

#[test]
fn report_flags_survive_serialization() {
    use narrow_pnp::bounds::{audit, AuditSettings, BoundsReport};
    use narrow_pnp::continuation::solve_lambda0;
    for width in [0.05, 0.3, 1.0] {
        let g = strip(width, 32, 4);
        let c = reference_coeffs(&g);
        let h0 = solve_lambda0(&g, &c).unwrap();
        let rep = audit(&g, &c, &h0, &AuditSettings { seed: 3, ..AuditSettings::default() }).unwrap();
        let back: BoundsReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.recompute_flags(), rep.flags());
        assert!(rep.r > 0.0 && rep.big_r >= rep.r);
    }
}

#[test]
fn trace_terminus_matches_single_shot_newton() {
    use narrow_pnp::continuation::{newton_correct, solve_lambda0, trace_curve, TraceConfig};
    let g = strip(0.05, 64, 4);
    let c = reference_coeffs(&g);
    let cfg = TraceConfig::default();
    let t = trace_curve(&g, &c, &cfg).unwrap();
    let h0 = solve_lambda0(&g, &c).unwrap();
    let shot = newton_correct(&g, &c, &h0, 1.0, &cfg).unwrap();
    let diff = norm_h(&g, &t.terminus().unwrap().state.sub(&shot.state)).unwrap();
    assert!(diff <= 1e-8, "{diff:e}");
}

#[test]
fn lift_of_x_squared_matches_dense_elimination() {
    let g = unit_square(4);
    let trace = g.sample_boundary(|x, _| x * x);
    let lift = lift_boundary(&g, &trace).unwrap();
    // Interior values solve K·v = −K_IB·t, assembled here from the stencil.
    let k = dense_stiffness(&g);
    let h = 0.25;
    let rhs = DVector::from_iterator(
        g.num_interior(),
        g.interior_nodes().iter().map(|&node| {
            let (x, y) = g.coords()[node];
            [(x - h, y), (x + h, y), (x, y - h), (x, y + h)]
                .iter()
                .filter(|&&(a, b)| a.abs() < 1e-12 || b.abs() < 1e-12 || (a - 1.0).abs() < 1e-12 || (b - 1.0).abs() < 1e-12)
                .map(|&(a, _)| a * a)
                .sum::<f64>()
        }),
    );
    let dense = k.lu().solve(&rhs).unwrap();
    for (i, &node) in g.interior_nodes().iter().enumerate() {
        assert!((lift[node] - dense[i]).abs() < 1e-12);
    }
}

#[test]
fn lambda0_solve_matches_dense_oracle() {
    use narrow_pnp::continuation::solve_lambda0;
    let g = strip(0.05, 12, 4);
    let c = reference_coeffs(&g);
    let h0 = solve_lambda0(&g, &c).unwrap();
    let oracle = DenseModel::new(&g, &c, 0.0).solve_state(&g).unwrap();
    let diff = h0.sub(&oracle);
    let worst = diff.components().iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-9, "{worst:e}");
}
