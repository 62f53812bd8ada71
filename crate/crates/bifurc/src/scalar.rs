//! Nestable forward-mode differentiation scalars.
//!
//! [`Scalar`] abstracts over the number type that model right-hand sides and
//! the dense linear algebra routines are evaluated in. It is implemented for
//! `f64` and for [`Dual<T>`], a single-perturbation dual number whose parts
//! may themselves be duals. Nesting duals (`Dual<Dual<f64>>`, three levels
//! deep at most in this crate) yields exact higher-order directional
//! derivatives: seeding the perturbation part of an input with a direction
//! vector makes every downstream computation carry the corresponding
//! directional derivative in its perturbation part.
//!
//! Branch decisions (pivoting, absolute values, comparisons) always consult
//! the innermost real part via [`Scalar::value`], so derivative information
//! never changes control flow.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number type usable in model evaluation and the dense solvers.
pub trait Scalar:
    Copy
    + fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    fn zero() -> Self;
    fn one() -> Self;

    /// Innermost real part; used for pivoting and branching.
    fn value(&self) -> f64;

    /// True when every component (real and all perturbation parts) is finite.
    fn all_finite(&self) -> bool;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    /// |x|, branching on the sign of the innermost real part.
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Integer power by repeated multiplication (exponents here are tiny).
    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return Self::one() / self.powi(-n);
        }
        let mut acc = Self::one();
        for _ in 0..n {
            acc *= self;
        }
        acc
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Single-perturbation dual number `re + ε·du` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, du: T) -> Self {
        Dual { re, du }
    }

    /// Lift a value with zero perturbation.
    #[inline]
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            du: T::zero(),
        }
    }

    /// Value with perturbation seeded to `du`.
    #[inline]
    pub fn seeded(re: T, du: T) -> Self {
        Dual { re, du }
    }
}

/// Lift a slice of scalars into constants (zero perturbation).
pub fn lift<T: Scalar>(xs: &[T]) -> Vec<Dual<T>> {
    xs.iter().map(|&x| Dual::constant(x)).collect()
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.du + rhs.du)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.du - rhs.du)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(
            self.re * rhs.re,
            self.re * rhs.du + self.du * rhs.re,
        )
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let re = self.re / rhs.re;
        Dual::new(re, (self.du - re * rhs.du) / rhs.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(T::from_f64(x))
    }
    #[inline]
    fn zero() -> Self {
        Dual::constant(T::zero())
    }
    #[inline]
    fn one() -> Self {
        Dual::constant(T::one())
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.re.all_finite() && self.du.all_finite()
    }

    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.du * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.du * self.re.sin()))
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        let two = T::from_f64(2.0);
        Dual::new(r, self.du / (two * r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D1 = Dual<f64>;
    type D2 = Dual<Dual<f64>>;

    #[test]
    fn first_derivatives() {
        // d/dx [x·sin(x)] = sin(x) + x·cos(x)
        let x = D1::seeded(1.3, 1.0);
        let y = x * x.sin();
        assert!((y.re - 1.3 * 1.3f64.sin()).abs() < 1e-15);
        assert!((y.du - (1.3f64.sin() + 1.3 * 1.3f64.cos())).abs() < 1e-15);
    }

    #[test]
    fn division_rule() {
        let x = D1::seeded(2.0, 1.0);
        let y = D1::constant(4.0) / x; // d/dx 4/x = -4/x² = -1
        assert!((y.re - 2.0).abs() < 1e-15);
        assert!((y.du + 1.0).abs() < 1e-15);
    }

    #[test]
    fn nested_second_derivative() {
        // f(x) = exp(x²); f'' = (2 + 4x²)·exp(x²)
        let x0 = 0.7;
        let x = D2::seeded(D1::seeded(x0, 1.0), D1::constant(1.0));
        let y = (x * x).exp();
        let f2 = y.du.du;
        let expect = (2.0 + 4.0 * x0 * x0) * (x0 * x0).exp();
        assert!((f2 - expect).abs() < 1e-12);
    }

    #[test]
    fn third_derivative_via_triple_nesting() {
        // f(x) = x⁴; f''' = 24x
        type D3 = Dual<Dual<Dual<f64>>>;
        let x0 = 1.5;
        let x = D3::seeded(
            D2::seeded(D1::seeded(x0, 1.0), D1::constant(1.0)),
            D2::constant(D1::constant(1.0)),
        );
        let y = x.powi(4);
        assert!((y.du.du.du - 24.0 * x0).abs() < 1e-10);
    }

    #[test]
    fn abs_branches_on_real_part() {
        let x = D1::seeded(-3.0, 1.0);
        let y = x.abs();
        assert_eq!(y.re, 3.0);
        assert_eq!(y.du, -1.0);
    }

    #[test]
    fn sqrt_and_ln_chain() {
        let x = D1::seeded(2.0, 1.0);
        let y = x.sqrt().ln(); // 0.5·ln x, derivative 1/(2x)
        assert!((y.du - 0.25).abs() < 1e-15);
    }
}
