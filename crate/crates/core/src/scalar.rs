//! Scalar abstraction. Everything numeric in the crate is generic over `T: Scalar`.

use nalgebra::{Complex, RealField};
use std::fmt::{Debug, Display};

/// A real field usable throughout the crate (implemented for `f32` and `f64`).
pub trait Scalar: RealField + Copy + Debug + Display + Send + Sync + 'static {
    fn lit(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Machine epsilon.
    fn eps() -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}

pub type C<T> = Complex<T>;

#[inline]
pub fn cr<T: Scalar>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

#[inline]
pub fn czero<T: Scalar>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn cabs<T: Scalar>(z: C<T>) -> T {
    z.re.hypot(z.im)
}

#[inline]
pub fn cconj<T: Scalar>(z: C<T>) -> C<T> {
    Complex::new(z.re, -z.im)
}

#[inline]
pub fn cexp<T: Scalar>(z: C<T>) -> C<T> {
    let (s, c) = z.im.sin_cos();
    let m = z.re.exp();
    Complex::new(m * c, m * s)
}

#[inline]
pub fn cdiv<T: Scalar>(a: C<T>, b: C<T>) -> C<T> {
    // Smith's algorithm keeps the quotient accurate when |b| spans many decades.
    if b.re.abs() >= b.im.abs() {
        let r = b.im / b.re;
        let d = b.re + b.im * r;
        Complex::new((a.re + a.im * r) / d, (a.im - a.re * r) / d)
    } else {
        let r = b.re / b.im;
        let d = b.re * r + b.im;
        Complex::new((a.re * r + a.im) / d, (a.im * r - a.re) / d)
    }
}

#[inline]
pub fn csqrt<T: Scalar>(z: C<T>) -> C<T> {
    let m = cabs(z);
    if m == T::zero() {
        return czero();
    }
    let half = lit::<T>(0.5);
    let re = ((m + z.re) * half).sqrt();
    let im = ((m - z.re) * half).sqrt();
    Complex::new(re, if z.im < T::zero() { -im } else { im })
}

/// (e^{λt} − 1)/λ, continuous through λ = 0.
pub fn phi1<T: Scalar>(lambda: C<T>, t: T) -> C<T> {
    let x = lambda * t;
    if cabs(x) < lit(1e-4) {
        // t(1 + x/2 + x²/6 + x³/24)
        let one = cr(T::one());
        let s = one + x * lit::<T>(0.5) + x * x * lit::<T>(1.0 / 6.0) + x * x * x * lit::<T>(1.0 / 24.0);
        s * t
    } else {
        cdiv(cexp(x) - cr(T::one()), lambda)
    }
}

/// d/dλ of `phi1`, i.e. (t e^{λt} − phi1)/λ.
pub fn dphi1<T: Scalar>(lambda: C<T>, t: T) -> C<T> {
    let x = lambda * t;
    if cabs(x) < lit(1e-3) {
        // t²(1/2 + x/3 + x²/8 + x³/30)
        let s = cr(lit::<T>(0.5))
            + x * lit::<T>(1.0 / 3.0)
            + x * x * lit::<T>(0.125)
            + x * x * x * lit::<T>(1.0 / 30.0);
        s * (t * t)
    } else {
        cdiv(cexp(x) * t - phi1(lambda, t), lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi1_series_matches_closed_form_near_switch() {
        let l = Complex::new(-0.3, 0.2);
        for &t in &[1e-5, 3e-4, 1e-3] {
            let a = phi1(l, t);
            let b = cdiv(cexp(l * t) - cr(1.0), l);
            assert!(cabs(a - b) < 1e-15);
        }
    }

    #[test]
    fn dphi1_matches_difference() {
        let l = Complex::new(-0.7, 1.1);
        let h = 1e-6;
        for &t in &[0.001, 0.5, 3.0] {
            let fd = (phi1(l + cr(h), t) - phi1(l - cr(h), t)) / (2.0 * h);
            assert!(cabs(fd - dphi1(l, t)) < 1e-8 * (1.0 + cabs(fd)));
        }
    }

    #[test]
    fn smith_division() {
        let a = Complex::new(1e-300, 2.0);
        let b = Complex::new(3.0, -4.0);
        let q = cdiv(a, b);
        assert!(cabs(q * b - a) < 1e-15);
    }
}
