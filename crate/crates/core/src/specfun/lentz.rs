use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_EPS: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Stand-in for a zero leading term; subtracted again from the result.
pub const LEAD_SENTINEL: f64 = 1e-30;

const TINY: f64 = 1e-300;

/// `s + r(1)/(q(1) + r(2)/(q(2) + ...))`.
///
/// `term(j)` returns the pair `(r(j), q(j))` for `j >= 1`.
pub struct ContinuedFraction<S, F> {
    pub lead: S,
    pub term: F,
    pub eps: f64,
    pub max_iter: usize,
}

impl<S: Real, F: Fn(usize) -> (S, S)> ContinuedFraction<S, F> {
    pub fn new(lead: S, term: F) -> Self {
        ContinuedFraction {
            lead,
            term,
            eps: DEFAULT_EPS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_limits(mut self, eps: f64, max_iter: usize) -> Self {
        self.eps = eps;
        self.max_iter = max_iter;
        self
    }
}

#[inline]
fn guard<S: Real>(x: S) -> S {
    let v = x.value();
    if v.abs() < TINY {
        S::cst(if v < 0.0 { -TINY } else { TINY })
    } else {
        x
    }
}

/// Evaluates a continued fraction with the modified Lentz recurrence
/// (`C_0 = s`, `D_0 = 0`), stopping at the first `n` with `|C_n D_n - 1| < eps`.
pub fn lentz_eval<S: Real, F: Fn(usize) -> (S, S)>(cf: &ContinuedFraction<S, F>) -> Result<S> {
    if !(cf.eps > 0.0) || cf.max_iter == 0 {
        return Err(Error::domain("continued fraction needs eps > 0 and max_iter >= 1"));
    }
    let sentinel = cf.lead.value() == 0.0;
    let mut f = if sentinel { S::cst(LEAD_SENTINEL) } else { cf.lead };
    let mut c = f;
    let mut d = S::cst(0.0);
    for n in 1..=cf.max_iter {
        let (num, den) = (cf.term)(n);
        d = guard(den + num * d);
        c = guard(den + num / c);
        d = d.recip();
        let delta = c * d;
        f *= delta;
        if !f.is_finite() || !delta.is_finite() {
            return Err(Error::NumericFailure(format!(
                "non-finite continued fraction convergent at iteration {n}"
            )));
        }
        if (delta.value() - 1.0).abs() < cf.eps {
            return Ok(if sentinel { f - LEAD_SENTINEL } else { f });
        }
    }
    Err(Error::NonConvergence {
        iterations: cf.max_iter,
    })
}
