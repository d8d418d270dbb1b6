//! Scalar abstraction shared by plain evaluation and forward-mode
//! differentiation.
//!
//! Every geometric kernel that feeds an optimizer is written once over
//! [`Real`]. Instantiated with `f64` it is an ordinary evaluation; with
//! [`Dual`] it carries exact first derivatives with respect to up to `N`
//! seeded inputs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::Vector3;
use num_traits::{One, Zero};

pub trait Real:
    nalgebra::Scalar
    + Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Zero
    + One
    + Send
    + Sync
{
    fn cst(v: f64) -> Self;
    fn re(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn abs(self) -> Self {
        if self.re() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
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
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Forward-mode dual number with `N` infinitesimal directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: [0.0; N] }
    }

    /// Independent variable number `i`.
    pub fn var(re: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Dual { re, eps }
    }

    #[inline]
    fn chain(self, value: f64, deriv: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= deriv;
        }
        Dual { re: value, eps }
    }
}

impl<const N: usize> PartialOrd for Dual<N> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.re += o.re;
        for i in 0..N {
            self.eps[i] += o.eps[i];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.re -= o.re;
        for i in 0..N {
            self.eps[i] -= o.eps[i];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * o.re + self.re * o.eps[i];
        }
        Dual { re: self.re * o.re, eps }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * o.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<const N: usize> SubAssign for Dual<N> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<const N: usize> MulAssign for Dual<N> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}
impl<const N: usize> DivAssign for Dual<N> {
    fn div_assign(&mut self, o: Self) {
        *self = *self / o;
    }
}

impl<const N: usize> Zero for Dual<N> {
    fn zero() -> Self {
        Dual::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.eps.iter().all(|e| *e == 0.0)
    }
}

impl<const N: usize> One for Dual<N> {
    fn one() -> Self {
        Dual::constant(1.0)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        // d sqrt at 0 is unbounded; clamp so a zero-distance residual stays finite
        let d = if s > 1e-300 { 0.5 / s } else { 0.0 };
        self.chain(s, d)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, 1.0 + t * t)
    }
}

pub type V3<T> = Vector3<T>;

#[inline]
pub fn v3<T: Real>(x: f64, y: f64, z: f64) -> V3<T> {
    Vector3::new(T::cst(x), T::cst(y), T::cst(z))
}

#[inline]
pub fn lift<T: Real>(v: &Vector3<f64>) -> V3<T> {
    Vector3::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
}

#[inline]
pub fn norm<T: Real>(v: &V3<T>) -> T {
    v.dot(v).sqrt()
}

#[inline]
pub fn normalize<T: Real>(v: &V3<T>) -> V3<T> {
    let n = norm(v);
    v * (T::one() / n)
}

pub fn value(v: &V3<impl Real>) -> Vector3<f64> {
    Vector3::new(v.x.re(), v.y.re(), v.z.re())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_matches_derivatives() {
        let x = Dual::<2>::var(0.7, 0);
        let y = Dual::<2>::var(-1.3, 1);
        let f = (x * y).sin() + (x * x + y * y).sqrt() / y;
        let fx = |x: f64, y: f64| (x * y).sin() + (x * x + y * y).sqrt() / y;
        let h = 1e-6;
        let dx = (fx(0.7 + h, -1.3) - fx(0.7 - h, -1.3)) / (2.0 * h);
        let dy = (fx(0.7, -1.3 + h) - fx(0.7, -1.3 - h)) / (2.0 * h);
        assert!((f.re - fx(0.7, -1.3)).abs() < 1e-15);
        assert!((f.eps[0] - dx).abs() < 1e-8);
        assert!((f.eps[1] - dy).abs() < 1e-8);
    }

    #[test]
    fn tan_derivative() {
        let x = Dual::<1>::var(0.4, 0);
        let t = x.tan();
        assert!((t.eps[0] - 1.0 / 0.4f64.cos().powi(2)).abs() < 1e-12);
    }
}
