//! Scalar abstraction shared by the special functions and the likelihood.
//!
//! Everything that enters the objective is written against [`Real`], which is
//! implemented for `f64` and for the forward-mode [`Dual`] number. Evaluating
//! the log-likelihood with `Dual<N>` yields the exact gradient, including the
//! derivative of the truncation normalizer through the continued fractions.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use statrs::function::gamma::{digamma, ln_gamma};

pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn exp_m1(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn ln_gamma(self) -> Self;

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn is_finite(self) -> bool {
        self.value().is_finite()
    }

    /// `1 - self`
    fn one_minus(self) -> Self {
        -self + 1.0
    }

    /// `min(self, 0)`, for log-probabilities pushed above 0 by round-off.
    fn min_zero(self) -> Self {
        if self.value() > 0.0 {
            Self::cst(0.0)
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
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        ln_gamma(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Forward-mode dual number with `N` tangent directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }

    /// Independent variable `i`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Dual { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for (a, b) in self.d.iter_mut().zip(o.d) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for (a, b) in self.d.iter_mut().zip(o.d) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Dual { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for a in self.d.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.v += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.v -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, o: f64) -> Self {
        self.v *= o;
        for a in self.d.iter_mut() {
            *a *= o;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.v.ln_1p(), 1.0 / (1.0 + self.v))
    }
    fn exp_m1(self) -> Self {
        self.chain(self.v.exp_m1(), self.v.exp())
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn powf(self, e: Self) -> Self {
        // x^e = exp(e ln x); constant exponents skip the ln x tangent
        if e.d.iter().all(|&t| t == 0.0) {
            let v = self.v.powf(e.v);
            return self.chain(v, e.v * self.v.powf(e.v - 1.0));
        }
        (e * self.ln()).exp()
    }
    fn ln_gamma(self) -> Self {
        self.chain(ln_gamma(self.v), digamma(self.v))
    }
}

/// Natural log of the beta function.
pub fn ln_beta<S: Real>(a: S, b: S) -> S {
    a.ln_gamma() + b.ln_gamma() - (a + b).ln_gamma()
}

const STIRLING_MIN: f64 = 10.0;

/// `ln Γ(a + d) - ln Γ(a)` without the cancellation of two large log-gammas.
pub fn ln_gamma_ratio<S: Real>(a: S, d: S) -> S {
    if a.value() < STIRLING_MIN {
        return (a + d).ln_gamma() - a.ln_gamma();
    }
    // Stirling: (a+d-1/2) ln(a+d) - (a-1/2) ln a - d + tail(a+d) - tail(a)
    let z = a + d;
    (a - 0.5) * (d / a).ln_1p() + d * z.ln() - d + stirling_tail(z) - stirling_tail(a)
}

/// `Σ_k B_2k / (2k (2k-1) z^(2k-1))` through `k = 6`.
fn stirling_tail<S: Real>(z: S) -> S {
    let iz = z.recip();
    let iz2 = iz * iz;
    let inner = ((((iz2 * (-691.0 / 360_360.0) + 1.0 / 1188.0) * iz2 - 1.0 / 1680.0) * iz2 + 1.0 / 1260.0) * iz2
        - 1.0 / 360.0)
        * iz2
        + 1.0 / 12.0;
    iz * inner
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp<S: Real>(a: S, b: S) -> S {
    let (hi, lo) = if a.value() >= b.value() { (a, b) } else { (b, a) };
    if hi.value() == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 - exp(a))` for `a <= 0`, accurate at both ends.
pub fn ln_one_minus_exp<S: Real>(a: S) -> S {
    if a.value() >= 0.0 {
        return S::cst(f64::NEG_INFINITY);
    }
    if a.value() > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_ratio_matches_direct_and_high_precision() {
        for &(a, d) in &[(0.5, 3.0), (10.0, 0.25), (12.5, 40.0), (300.0, 7.0), (1e3, 1e4)] {
            let direct = Real::ln_gamma(a + d) - Real::ln_gamma(a);
            assert!((ln_gamma_ratio(a, d) - direct).abs() < 1e-11 * direct.abs().max(1.0), "{a} {d}");
        }
        for &(a, d) in &[(5e6, 12.5), (1e9, 0.3), (2.5e7, 400.0)] {
            let prec = 256;
            let fa = rug::Float::with_val(prec, a);
            let want = (rug::Float::with_val(prec, &fa + d).ln_gamma() - fa.ln_gamma()).to_f64();
            let got = ln_gamma_ratio(a, d);
            assert!((got - want).abs() < 1e-13 * want.abs(), "{a} {d}: {got} vs {want}");
        }
    }

    #[test]
    fn gamma_ratio_derivative() {
        let v = ln_gamma_ratio(Dual::<2>::var(2e5, 0), Dual::var(3.5, 1));
        let (a, d) = (2e5, 3.5);
        assert!((v.d[0] - (digamma(a + d) - digamma(a))).abs() < 1e-12);
        assert!((v.d[1] - digamma(a + d)).abs() < 1e-10);
    }

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn dual_matches_finite_differences() {
        let x = 2.7;
        let cases: Vec<(Box<dyn Fn(Dual<1>) -> Dual<1>>, Box<dyn Fn(f64) -> f64>)> = vec![
            (Box::new(|v| v.ln_gamma()), Box::new(|v| Real::ln_gamma(v))),
            (Box::new(|v| v.powf(Dual::cst(1.7))), Box::new(|v| v.powf(1.7))),
            (Box::new(|v| Dual::cst(0.3).powf(v)), Box::new(|v| 0.3f64.powf(v))),
            (Box::new(|v| (v * v + 1.0).sqrt() / v), Box::new(|v| (v * v + 1.0).sqrt() / v)),
            (Box::new(|v| ln_beta(v, v * 2.0)), Box::new(|v| ln_beta(v, v * 2.0))),
            (Box::new(|v| (-v).exp().ln_1p()), Box::new(|v| (-v).exp().ln_1p())),
            (Box::new(|v| (v * -0.1).exp_m1()), Box::new(|v| (v * -0.1).exp_m1())),
        ];
        for (g, f) in cases {
            let d = g(Dual::var(x, 0));
            assert!((d.v - f(x)).abs() < 1e-14);
            let num = fd(&f, x);
            assert!((d.d[0] - num).abs() < 1e-7 * num.abs().max(1.0), "{} vs {}", d.d[0], num);
        }
    }

    #[test]
    fn log_add_exp_is_stable() {
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }

    #[test]
    fn one_minus_exp_both_regimes() {
        assert!((ln_one_minus_exp(-1e-20) - (1e-20f64).ln()).abs() < 1e-12);
        assert!((ln_one_minus_exp(-50.0) + (-50.0f64).exp()).abs() < 1e-30);
        assert!((ln_one_minus_exp(-1.0) - (1.0 - (-1.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1.0, 1e-17, 1e-17, -1.0].into_iter().collect();
        assert!((s.value() - 2e-17).abs() < 1e-30);
    }
}
