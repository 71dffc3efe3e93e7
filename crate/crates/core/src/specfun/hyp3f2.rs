//! `3F2(1, a1, a2; b1, b2; 1)` through an interleaved continued fraction.
//!
//! The partial numerators and denominators cycle through three families,
//! `r(n) = r_i(k)`, `q(n) = q_i(k)` with `i = n mod 3`, `k = n div 3`:
//!
//! ```text
//! r_0(k) = -(k + b1 - a2 - 1)(k + b2 - a2 - 1) / ((2k - 1)(2k + a2 - 1)),  r_0(0) = 1
//! r_1(k) = -(k + b1 - 1)(k + b2 - 1) / (2k (2k + a1 - 1)),                 r_1(0) = -1
//! r_2(k) = -(k + b1 - a1)(k + b2 - a1) / ((2k + a1)(2k + a2))
//! q_0(k) = ((3k + b1 - 1)(3k + b2 - 1) - 2k (2k + a2)) / (2k (2k + a1 - 1)), q_0(0) = 1
//! q_1(k) = ((3k + b1)(3k + b2) - (2k + 1)(2k + a1)) / ((2k + a1)(2k + a2))
//! q_2(k) = ((3k + b1 + 1)(3k + b2 + 1) - (2k + a1 + 1)(2k + a2 + 1)) / ((2k + 1)(2k + a2 + 1))
//! ```
//!
//! and the value is `0 + r(0)/(q(0) + r(1)/(q(1) + ...))`. The zero leading
//! term goes through the Lentz sentinel.

use crate::error::{Error, Result};
use crate::real::Real;

use super::lentz::{lentz_eval, ContinuedFraction, DEFAULT_EPS, DEFAULT_MAX_ITER};

fn partial_num<S: Real>(n: usize, a1: S, a2: S, b1: S, b2: S) -> S {
    let (i, k) = (n % 3, (n / 3) as f64);
    match (i, k == 0.0) {
        (0, true) => S::cst(1.0),
        (1, true) => S::cst(-1.0),
        (0, false) => -((b1 - a2 + (k - 1.0)) * (b2 - a2 + (k - 1.0))) / ((a2 + (2.0 * k - 1.0)) * (2.0 * k - 1.0)),
        (1, false) => -((b1 + (k - 1.0)) * (b2 + (k - 1.0))) / ((a1 + (2.0 * k - 1.0)) * (2.0 * k)),
        _ => -((b1 - a1 + k) * (b2 - a1 + k)) / ((a1 + 2.0 * k) * (a2 + 2.0 * k)),
    }
}

fn partial_den<S: Real>(n: usize, a1: S, a2: S, b1: S, b2: S) -> S {
    let (i, k) = (n % 3, (n / 3) as f64);
    match i {
        0 if k == 0.0 => S::cst(1.0),
        0 => ((b1 + (3.0 * k - 1.0)) * (b2 + (3.0 * k - 1.0)) - (a2 + 2.0 * k) * (2.0 * k))
            / ((a1 + (2.0 * k - 1.0)) * (2.0 * k)),
        1 => ((b1 + 3.0 * k) * (b2 + 3.0 * k) - (a1 + 2.0 * k) * (2.0 * k + 1.0)) / ((a1 + 2.0 * k) * (a2 + 2.0 * k)),
        _ => ((b1 + (3.0 * k + 1.0)) * (b2 + (3.0 * k + 1.0)) - (a1 + (2.0 * k + 1.0)) * (a2 + (2.0 * k + 1.0)))
            / ((a2 + (2.0 * k + 1.0)) * (2.0 * k + 1.0)),
    }
}

/// `3F2(1, a1, a2; b1, b2; 1)` with the default tolerance and iteration cap.
pub fn hyp3f2_unit<S: Real>(a1: S, a2: S, b1: S, b2: S) -> Result<S> {
    hyp3f2_unit_with(a1, a2, b1, b2, DEFAULT_EPS, DEFAULT_MAX_ITER)
}

pub fn hyp3f2_unit_with<S: Real>(a1: S, a2: S, b1: S, b2: S, eps: f64, max_iter: usize) -> Result<S> {
    let (va1, va2, vb1, vb2) = (a1.value(), a2.value(), b1.value(), b2.value());
    if ![va1, va2, vb1, vb2].iter().all(|v| v.is_finite()) {
        return Err(Error::domain("3F2 parameters must be finite"));
    }
    // a zero numerator parameter leaves only the leading series term
    if va1 == 0.0 || va2 == 0.0 {
        return Ok(S::cst(1.0));
    }
    if !(vb1 + vb2 > va1 + va2 + 1.0) {
        return Err(Error::domain(format!(
            "3F2 at unit argument diverges: b1 + b2 = {} <= a1 + a2 + 1 = {}",
            vb1 + vb2,
            va1 + va2 + 1.0
        )));
    }
    if vb1 <= 0.0 && vb1.fract() == 0.0 || vb2 <= 0.0 && vb2.fract() == 0.0 {
        return Err(Error::domain("3F2 lower parameters must not be non-positive integers"));
    }
    let cf = ContinuedFraction::new(S::cst(0.0), move |j: usize| {
        let n = j - 1;
        (partial_num(n, a1, a2, b1, b2), partial_den(n, a1, a2, b1, b2))
    })
    .with_limits(eps, max_iter);
    lentz_eval(&cf)
}
