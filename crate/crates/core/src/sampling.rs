//! Seeded random states and residuals for the sampling-based estimators.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::mesh::Grid;
use crate::system::{norm_g, norm_h, BlockState, DualResidual};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixture of nodal noise and a random low-order sine mode.
pub fn random_field<R: Rng>(grid: &Grid, rng: &mut R) -> Vec<f64> {
    let spec = grid.spec();
    let kx = rng.random_range(1..=4) as f64;
    let ky = rng.random_range(1..=2) as f64;
    let rough = rng.random_range(0.0..1.0);
    let smooth = rng.random_range(0.0..1.0);
    grid.interior_nodes()
        .iter()
        .map(|&g| {
            let (x, y) = grid.coords()[g];
            let mode = (kx * PI * x / spec.length).sin() * (ky * PI * y / spec.width).sin();
            rough * rng.random_range(-1.0..1.0) + smooth * mode
        })
        .collect()
}

/// Random state with `‖h‖_𝓗 = 1` and random component weights.
pub fn random_unit_state<R: Rng>(grid: &Grid, rng: &mut R) -> BlockState {
    loop {
        let mut h = BlockState {
            rho: random_field(grid, rng),
            sigma: random_field(grid, rng),
            tau: random_field(grid, rng),
        };
        for comp in [&mut h.rho, &mut h.sigma, &mut h.tau] {
            let w = rng.random_range(0.0..1.0);
            comp.iter_mut().for_each(|v| *v *= w);
        }
        let norm = norm_h(grid, &h).expect("state sized from grid");
        if norm > 0.0 {
            return h.scale(1.0 / norm);
        }
    }
}

/// Random state uniformly scaled into the ball `‖h‖_𝓗 ≤ radius`.
pub fn random_state_in_ball<R: Rng>(grid: &Grid, rng: &mut R, radius: f64) -> BlockState {
    let r = radius * rng.random_range(0.0..1.0);
    random_unit_state(grid, rng).scale(r)
}

/// Random residual with `‖g‖_𝓖 = 1`.
pub fn random_unit_dual<R: Rng>(grid: &Grid, rng: &mut R) -> DualResidual {
    loop {
        let mut g = DualResidual {
            g1: random_field(grid, rng),
            g2: random_field(grid, rng),
            g3: random_field(grid, rng),
        };
        for comp in [&mut g.g1, &mut g.g2, &mut g.g3] {
            let w = rng.random_range(0.0..1.0);
            comp.iter_mut().for_each(|v| *v *= w);
        }
        let norm = norm_g(grid, &g).expect("residual sized from grid");
        if norm > 0.0 {
            return g.scale(1.0 / norm);
        }
    }
}
