//! Homotopy continuation for the steady drift-diffusion (Poisson–Nernst–Planck)
//! system on narrow rectangular strips.
//!
//! The solver traces a curve of discrete solutions `F(h, λ) = 0` from the
//! decoupled linear problem at `λ = 0` to the fully coupled system at `λ = 1`
//! with an Euler predictor and a Newton corrector. Alongside the driver the
//! crate measures the constants that govern feasibility of the continuation:
//! the width bound `d₀`, a Lipschitz constant for the derivatives, the norm of
//! the inverse Jacobian, the ball radius `r` and the step condition on it.
//!
//! Module map:
//!
//! * [`mesh`]: strip geometry, 5-point operators, harmonic boundary lifts.
//! * [`system`]: residual, Jacobian, parameter derivative and the discrete norms.
//! * [`linsolve`]: direct block solve and the preconditioned contraction iteration.
//! * [`bounds`]: explicit constants and feasibility verdicts.
//! * [`continuation`]: the `λ = 0` solve, predictor, corrector and curve driver.
//! * [`cli`]: configuration parsing and the `audit` / `solve0` / `trace` commands.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod continuation;
pub mod error;
pub mod linsolve;
pub mod mesh;
pub mod sampling;
pub mod sparse;
pub mod system;

pub use error::{Error, Result};
