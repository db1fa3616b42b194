//! Explicit feasibility constants and the audit report.
//!
//! `C` has no closed form and is estimated by sampling, so it is a lower
//! estimate; every verdict guards it with `max(C, M)` where `M = 2` is the
//! inverse bound of the contraction regime.

pub mod exact;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linsolve::{measure_inverse_norm, solve_contraction};
use crate::mesh::Grid;
use crate::sampling;
use crate::system::{
    f_lambda, jacobian_apply, l2_full, norm_g, norm_h, sup_norm, BlockState, Coefficients, HomotopyParam,
};
use exact::{BoundScalar, QuadSqrt2};

/// A width bound that may be absent when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WidthBound {
    Finite(f64),
    Unconstrained,
}

impl WidthBound {
    /// `d < bound`.
    pub fn admits(&self, width: f64) -> bool {
        match *self {
            WidthBound::Finite(b) => width < b,
            WidthBound::Unconstrained => true,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            WidthBound::Finite(b) => Some(b),
            WidthBound::Unconstrained => None,
        }
    }
}

impl Serialize for WidthBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WidthBound::Finite(v) => s.serialize_f64(*v),
            WidthBound::Unconstrained => s.serialize_str("unconstrained"),
        }
    }
}

impl<'de> Deserialize<'de> for WidthBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(WidthBound::Finite(v)),
            Raw::Str(s) if s == "unconstrained" => Ok(WidthBound::Unconstrained),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected width bound {s:?}"))),
        }
    }
}

fn d0_from(coeffs: &Coefficients, denominator: f64) -> WidthBound {
    if denominator == 0.0 {
        return WidthBound::Unconstrained;
    }
    let ratio = (coeffs.d_n / coeffs.c_n).min(coeffs.d_p / coeffs.c_p);
    WidthBound::Finite((4.0 * ratio / denominator).sqrt())
}

/// `d₀² = 4·min(d_n/c_n, d_p/c_p) / (‖D‖_∞ + ‖a_u‖_∞)`.
pub fn compute_d0(coeffs: &Coefficients) -> WidthBound {
    d0_from(coeffs, coeffs.doping_sup() + sup_norm(&coeffs.a_u))
}

/// The same bound with the coercivity quantity `‖D + ∇²a_u‖_∞` as the
/// denominator, evaluated at interior nodes with the 5-point Laplacian.
///
/// A denominator at the rounding level of the discrete Laplacian counts as
/// zero, so harmonic `a_u` gives "unconstrained" rather than a huge number.
pub fn compute_d0_coercivity(grid: &Grid, coeffs: &Coefficients) -> WidthBound {
    let h = grid.hx().min(grid.hy());
    let noise = 1e3 * f64::EPSILON * (coeffs.doping_sup() + sup_norm(&coeffs.a_u) / (h * h));
    let q = coercivity_sup(grid, coeffs);
    d0_from(coeffs, if q <= noise { 0.0 } else { q })
}

/// `‖D + ∇²a_u‖_∞` over interior nodes.
pub fn coercivity_sup(grid: &Grid, coeffs: &Coefficients) -> f64 {
    let mut lap = vec![0.0; grid.num_interior()];
    for e in grid.edges() {
        let f = e.weight * (coeffs.a_u[e.a] - coeffs.a_u[e.b]);
        if let Some(k) = grid.interior_index(e.a) {
            lap[k] -= f;
        }
        if let Some(k) = grid.interior_index(e.b) {
            lap[k] += f;
        }
    }
    let inv_cell = 1.0 / grid.cell_measure();
    grid.interior_nodes()
        .iter()
        .zip(&lap)
        .fold(0.0, |m, (&g, l)| m.max((coeffs.doping[g] + inv_cell * l).abs()))
}

/// One sample of the Lipschitz quotient for `F_h` (along `hp`) and `F_λ`.
///
/// Returns `None` for coincident pairs, where the quotient is `0/0`.
pub fn lipschitz_ratio(
    grid: &Grid,
    coeffs: &Coefficients,
    (v, lambda): (&BlockState, f64),
    (w, mu): (&BlockState, f64),
    hp: &BlockState,
) -> Result<Option<f64>> {
    let dist = (norm_h(grid, &v.sub(w))?.powi(2) + (lambda - mu).powi(2)).sqrt();
    if dist == 0.0 {
        return Ok(None);
    }
    let (lv, lw) = (HomotopyParam::new(lambda)?, HomotopyParam::new(mu)?);
    let jh = jacobian_apply(grid, coeffs, v, lv, hp)?.sub(&jacobian_apply(grid, coeffs, w, lw, hp)?);
    let jl = f_lambda(grid, coeffs, v)?.sub(&f_lambda(grid, coeffs, w)?);
    let hp_norm = norm_h(grid, hp)?;
    let ratio_h = if hp_norm > 0.0 { norm_g(grid, &jh)? / hp_norm } else { 0.0 };
    Ok(Some(ratio_h.max(norm_g(grid, &jl)?) / dist))
}

/// Sampled estimate of the Lipschitz constant `C` of `F_h` and `F_λ` over
/// the ball `‖h‖_𝓗 ≤ radius`, `λ ∈ [0, 1]`. Deterministic for a given seed.
pub fn estimate_lipschitz(grid: &Grid, coeffs: &Coefficients, radius: f64, samples: usize, seed: u64) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 Lipschitz samples, got {samples}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("sampling radius must be positive, got {radius}")));
    }
    let mut rng = sampling::rng(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        use rand::Rng;
        let v = sampling::random_state_in_ball(grid, &mut rng, radius);
        let w = sampling::random_state_in_ball(grid, &mut rng, radius);
        let lambda = rng.random_range(0.0..=1.0);
        let mu = rng.random_range(0.0..=1.0);
        let hp = sampling::random_unit_state(grid, &mut rng);
        if let Some(r) = lipschitz_ratio(grid, coeffs, (&v, lambda), (&w, mu), &hp)? {
            best = best.max(r);
        }
    }
    Ok(best)
}

/// Width demanded by `α₀` and the resulting ball radius:
///
/// ```text
/// d = α₀ / (2√2·max(C, M))
/// r = max(C, M)·(1 + ‖a_n‖ + ‖a_p‖)/(1 − α₀/2) + α₀/(2 − α₀)·‖h₀‖
/// ```
///
/// With the default `M = 2` this is `max(C, 2)` throughout.
pub fn compute_r<T: BoundScalar>(c: T, m: T, a_n: T, a_p: T, h0_norm: T, alpha0: T) -> Result<(T, T)> {
    let zero = T::from_f64(0.0);
    let one = T::from_f64(1.0);
    let two = T::from_f64(2.0);
    if !(alpha0 > zero && alpha0 <= one) {
        return Err(Error::InvalidParameter("alpha0 must lie in (0, 1]".into()));
    }
    if !(c > zero && m > zero) {
        return Err(Error::InvalidParameter("C and M must be positive".into()));
    }
    let big = T::max_of(c, m);
    let d = alpha0.clone() / (two.clone() * T::sqrt2() * big.clone());
    let r = one.clone() / (one.clone() - alpha0.clone() / two.clone()) * big * (one + a_n + a_p)
        + alpha0.clone() / (two - alpha0) * h0_norm;
    Ok((d, r))
}

/// `r ≥ max(C, M)·span·(1 + sup‖F_μ‖)`.
pub fn check_bigr<T: BoundScalar>(r: T, c: T, m: T, lambda_span: T, sup_f_mu: T) -> bool {
    r >= T::max_of(c, m) * lambda_span * (T::from_f64(1.0) + sup_f_mu)
}

/// `‖a_n‖_{L²} + ‖a_p‖_{L²} + (2d/√2)·R`.
pub fn sup_f_mu_bound<T: BoundScalar>(a_n: T, a_p: T, d: T, big_r: T) -> T {
    a_n + a_p + T::from_f64(2.0) * d / T::sqrt2() * big_r
}

/// Knobs for [`audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSettings {
    pub alpha0: f64,
    pub inverse_bound: f64,
    pub lipschitz_samples: usize,
    pub inverse_probes: usize,
    pub contraction_tol: f64,
    pub contraction_maxit: usize,
    pub seed: u64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            alpha0: 1.0,
            inverse_bound: 2.0,
            lipschitz_samples: 200,
            inverse_probes: 20,
            contraction_tol: 1e-10,
            contraction_maxit: 500,
            seed: 0,
        }
    }
}

/// Every constant of the feasibility argument for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsReport {
    pub width: f64,
    /// Width bound from the closed formula with `‖D‖_∞ + ‖a_u‖_∞`.
    pub d0: WidthBound,
    /// Width bound with the coercivity quantity `‖D + ∇²a_u‖_∞`.
    pub d0_coercivity: WidthBound,
    /// Empirical lower estimate of the Lipschitz constant.
    #[serde(rename = "C_meas")]
    pub c_meas: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "sup_F_mu")]
    pub sup_f_mu: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub alpha0: f64,
    pub d_required: f64,
    pub h0_norm: f64,
    pub a_n_l2: f64,
    pub a_p_l2: f64,
    pub contraction_converged: bool,
    pub contraction_factor: f64,
    pub inverse_norm_estimate: f64,
    pub contraction_width_ok: bool,
    pub bigr_ok: bool,
    pub width_ok: bool,
    pub width_ok_coercivity: bool,
}

/// The three verdicts recomputed from the stored scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flags {
    pub contraction_width_ok: bool,
    pub bigr_ok: bool,
    pub width_ok: bool,
    pub width_ok_coercivity: bool,
}

impl BoundsReport {
    /// Recomputes every flag; `bigr_ok` is decided in exact arithmetic.
    pub fn recompute_flags(&self) -> Flags {
        let q = QuadSqrt2::from_f64;
        let sup = sup_f_mu_bound(q(self.a_n_l2), q(self.a_p_l2), q(self.width), q(self.big_r));
        Flags {
            contraction_width_ok: self.contraction_converged && self.contraction_factor <= 0.5,
            bigr_ok: check_bigr(q(self.r), q(self.c_meas), q(self.m), q(1.0), sup),
            width_ok: self.d0.admits(self.width),
            width_ok_coercivity: self.d0_coercivity.admits(self.width),
        }
    }

    pub fn flags(&self) -> Flags {
        Flags {
            contraction_width_ok: self.contraction_width_ok,
            bigr_ok: self.bigr_ok,
            width_ok: self.width_ok,
            width_ok_coercivity: self.width_ok_coercivity,
        }
    }

    /// All hypotheses of the existence argument hold.
    pub fn feasible(&self) -> bool {
        self.contraction_width_ok && self.bigr_ok && self.width_ok
    }
}

/// Measures every constant for the instance with `λ = 0` solution `h0`.
pub fn audit(grid: &Grid, coeffs: &Coefficients, h0: &BlockState, settings: &AuditSettings) -> Result<BoundsReport> {
    coeffs.validate(grid)?;
    let width = grid.width();
    let h0_norm = norm_h(grid, h0)?;
    let a_n_l2 = l2_full(grid, &coeffs.a_n);
    let a_p_l2 = l2_full(grid, &coeffs.a_p);
    let m = settings.inverse_bound;

    // F is quadratic, so C does not depend on the ball; sample in the ball
    // the default radius formula gives for C = M.
    let (_, r_guess) = compute_r(m, m, a_n_l2, a_p_l2, h0_norm, settings.alpha0)?;
    let c_meas = estimate_lipschitz(grid, coeffs, h0_norm + r_guess, settings.lipschitz_samples, settings.seed)?;
    let (d_required, r) = compute_r(c_meas.max(f64::MIN_POSITIVE), m, a_n_l2, a_p_l2, h0_norm, settings.alpha0)?;
    let big_r = h0_norm + r;
    let sup_f_mu = sup_f_mu_bound(a_n_l2, a_p_l2, width, big_r);

    let lambda_one = HomotopyParam::new(1.0)?;
    let mut rng = sampling::rng(settings.seed.wrapping_add(1));
    let probe = sampling::random_unit_dual(grid, &mut rng);
    let (contraction_converged, contraction_factor) = match solve_contraction(
        grid,
        coeffs,
        h0,
        lambda_one,
        &probe,
        settings.contraction_tol,
        settings.contraction_maxit,
    ) {
        Ok((_, rep)) => (true, rep.contraction_factor),
        Err(Error::NonConvergence { factor, .. }) => (false, factor),
        Err(e) => return Err(e),
    };
    let inverse_norm_estimate = match measure_inverse_norm(
        grid,
        coeffs,
        h0,
        lambda_one,
        settings.inverse_probes,
        settings.seed.wrapping_add(2),
    ) {
        Ok(v) => v,
        Err(Error::Singular { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };

    let mut report = BoundsReport {
        width,
        d0: compute_d0(coeffs),
        d0_coercivity: compute_d0_coercivity(grid, coeffs),
        c_meas,
        m,
        sup_f_mu,
        r,
        big_r,
        alpha0: settings.alpha0,
        d_required,
        h0_norm,
        a_n_l2,
        a_p_l2,
        contraction_converged,
        contraction_factor,
        inverse_norm_estimate,
        contraction_width_ok: false,
        bigr_ok: false,
        width_ok: false,
        width_ok_coercivity: false,
    };
    let flags = report.recompute_flags();
    report.contraction_width_ok = flags.contraction_width_ok;
    report.bigr_ok = flags.bigr_ok;
    report.width_ok = flags.width_ok;
    report.width_ok_coercivity = flags.width_ok_coercivity;
    Ok(report)
}
