//! Scalar abstraction for residual evaluation.
//!
//! Residuals are written once, generically over [`Real`], and evaluated
//! either with plain `f64` (costs) or with [`Dual`] numbers (exact
//! forward-mode derivatives, one seeded parameter at a time).

#[cfg(not(feature = "std"))]
use num_traits::Float;

use core::ops::{Add, Div, Mul, Neg, Sub};

/// Minimal scalar interface needed by the residual kernels.
pub trait Real:
    Copy
    + core::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Value part (drops any derivative information).
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// First-order dual number: value plus one derivative channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub const fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }

    /// Constant (zero derivative).
    pub const fn constant(v: f64) -> Self {
        Self { v, d: 0.0 }
    }

    /// Variable seeded with derivative 1.
    pub const fn seeded(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        Self::new(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d)
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        Self::new(r, self.d / (2.0 * r))
    }
    #[inline]
    fn sin(self) -> Self {
        Self::new(self.v.sin(), self.d * self.v.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Self::new(self.v.cos(), -self.d * self.v.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diff(f: impl Fn(Dual) -> Dual, x: f64) -> (f64, f64) {
        let y = f(Dual::seeded(x));
        (y.v, y.d)
    }

    #[test]
    fn derivative_of_composite_expression() {
        // f(x) = sin(x^2) / sqrt(x) ; f'(x) by hand.
        let f = |x: Dual| fnval(x);
        fn fnval(x: Dual) -> Dual {
            (x * x).sin() / x.sqrt()
        }
        let x = 1.3;
        let (v, d) = diff(f, x);
        let expected_v = (x * x).sin() / x.sqrt();
        let expected_d =
            (2.0 * x * (x * x).cos()) / x.sqrt() - 0.5 * (x * x).sin() / x.powf(1.5);
        assert!((v - expected_v).abs() < 1e-14);
        assert!((d - expected_d).abs() < 1e-12);
    }

    #[test]
    fn constants_carry_no_derivative() {
        let c = Dual::constant(5.0);
        let x = Dual::seeded(2.0);
        let y = c * x + c;
        assert_eq!(y.v, 15.0);
        assert_eq!(y.d, 5.0);
    }
}
