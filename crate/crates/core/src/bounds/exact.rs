//! Exact arithmetic in `ℚ(√2)` and the scalar trait the bound formulas use.
//!
//! The width and radius formulas only ever combine dyadic inputs (every
//! `f64` is one) with `√2`, so `ℚ(√2)` is closed under all of them and
//! comparisons such as the step condition can be decided exactly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Sub};

/// Scalars the bound formulas are generic over.
pub trait BoundScalar:
    Clone + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    /// Exact conversion where the type allows it.
    fn from_f64(v: f64) -> Self;
    fn sqrt2() -> Self;

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl BoundScalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn sqrt2() -> Self {
        std::f64::consts::SQRT_2
    }
}

/// The number `a + b√2` with rational `a`, `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadSqrt2 {
    a: BigRational,
    b: BigRational,
}

impl QuadSqrt2 {
    pub fn new(a: BigRational, b: BigRational) -> Self {
        QuadSqrt2 { a, b }
    }

    pub fn rational(a: BigRational) -> Self {
        QuadSqrt2 { a, b: BigRational::zero() }
    }

    pub fn zero() -> Self {
        Self::rational(BigRational::zero())
    }

    pub fn from_int(v: i64) -> Self {
        Self::rational(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn rational_part(&self) -> &BigRational {
        &self.a
    }

    pub fn sqrt2_part(&self) -> &BigRational {
        &self.b
    }

    fn signum(&self) -> Ordering {
        let (a, b) = (&self.a, &self.b);
        let sa = a.cmp(&BigRational::zero());
        let sb = b.cmp(&BigRational::zero());
        match (sa, sb) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (s, t) if s == t => s,
            // Opposite signs: the larger of a² and 2b² wins.
            (sa, _) => {
                let a2 = a * a;
                let b2 = b * b * BigRational::from_integer(BigInt::from(2));
                match a2.cmp(&b2) {
                    Ordering::Greater => sa,
                    Ordering::Less => sa.reverse(),
                    Ordering::Equal => Ordering::Equal,
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        self.a.to_f64().unwrap_or(f64::NAN) + self.b.to_f64().unwrap_or(f64::NAN) * std::f64::consts::SQRT_2
    }

    pub fn abs(&self) -> Self {
        if self.signum() == Ordering::Less {
            -self.clone()
        } else {
            self.clone()
        }
    }
}

impl Add for QuadSqrt2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        QuadSqrt2::new(self.a + rhs.a, self.b + rhs.b)
    }
}

impl Sub for QuadSqrt2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        QuadSqrt2::new(self.a - rhs.a, self.b - rhs.b)
    }
}

impl Mul for QuadSqrt2 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let two = BigRational::from_integer(BigInt::from(2));
        QuadSqrt2::new(
            &self.a * &rhs.a + two * &self.b * &rhs.b,
            &self.a * &rhs.b + &self.b * &rhs.a,
        )
    }
}

impl Div for QuadSqrt2 {
    type Output = Self;
    /// Panics on division by zero.
    fn div(self, rhs: Self) -> Self {
        assert!(!rhs.is_zero(), "division by zero in Q(sqrt 2)");
        let two = BigRational::from_integer(BigInt::from(2));
        // a² − 2b² vanishes only at zero because √2 is irrational.
        let norm = &rhs.a * &rhs.a - two * &rhs.b * &rhs.b;
        let conj = QuadSqrt2::new(rhs.a.clone() / &norm, -(rhs.b.clone()) / &norm);
        self * conj
    }
}

impl PartialOrd for QuadSqrt2 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some((self.clone() - other.clone()).signum())
    }
}

impl BoundScalar for QuadSqrt2 {
    /// Panics on non-finite input.
    fn from_f64(v: f64) -> Self {
        let r = BigRational::from_f64(v).expect("finite f64 converts exactly to a rational");
        QuadSqrt2::rational(r)
    }

    fn sqrt2() -> Self {
        QuadSqrt2::new(BigRational::zero(), BigRational::from_integer(BigInt::from(1)))
    }
}

impl std::ops::Neg for QuadSqrt2 {
    type Output = Self;
    fn neg(self) -> Self {
        QuadSqrt2::new(-self.a, -self.b)
    }
}
