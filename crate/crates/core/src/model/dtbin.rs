//! Doubly truncated binomial diagnostic for the linear-bias assumption.
//!
//! Counts in a window are modelled as `Bin(r, 1/2)` restricted to `a..=b`,
//! with `a` and `b` the smallest and largest counts present. The fitted `r`
//! tracks the local coverage; plotting it across windows shows whether the
//! bias is roughly linear. Never used for scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::ln_one_minus_exp;
use crate::specfun::ln_reg_inc_beta_pair;

use super::window::OrientedCounts;

const P: f64 = 0.5;
const MIN_UNIQUE: usize = 4;
const GOLDEN_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtbinParams {
    pub r: f64,
    pub a: u64,
    pub b: u64,
}

/// One diagnostic estimate along the fixed-allele axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtbinPoint {
    pub fixed_value: u64,
    pub lo: u64,
    pub hi: u64,
    pub n_obs: u64,
    pub params: DtbinParams,
}

/// `(ln P(X <= k), ln P(X > k))` for `X ~ Bin(r, 1/2)`.
fn ln_cdf_sf(r: f64, k: u64) -> Result<(f64, f64)> {
    let kf = k as f64;
    if r - kf <= 0.0 {
        return Ok((0.0, f64::NEG_INFINITY));
    }
    // P(X <= k) = I_{1-p}(r - k, k + 1)
    ln_reg_inc_beta_pair(1.0 - P, r - kf, kf + 1.0)
}

/// `ln P(a <= X <= b)` for `X ~ Bin(r, 1/2)` with real `r >= b`.
fn ln_mass(r: f64, a: u64, b: u64) -> Result<f64> {
    let diff = |hi: f64, lo: f64| hi + ln_one_minus_exp(lo - hi);
    let (cdf_b, sf_b) = ln_cdf_sf(r, b)?;
    let (cdf_below, sf_below) = if a == 0 { (f64::NEG_INFINITY, 0.0) } else { ln_cdf_sf(r, a - 1)? };
    if cdf_b < 0.5f64.ln() {
        Ok(diff(cdf_b, cdf_below))
    } else {
        Ok(diff(sf_below, sf_b))
    }
}

/// Truncated binomial log-density with real `r`.
pub fn dtbin_logpmf(x: u64, params: &DtbinParams) -> Result<f64> {
    let DtbinParams { r, a, b } = *params;
    if !(a < b && r >= b as f64) {
        return Err(Error::domain(format!("DTBin needs a < b <= r (a={a}, b={b}, r={r})")));
    }
    if x < a || x > b {
        return Ok(f64::NEG_INFINITY);
    }
    let xf = x as f64;
    let ln_bin = ln_gamma(r + 1.0) - ln_gamma(xf + 1.0) - ln_gamma(r - xf + 1.0) + r * P.ln();
    Ok(ln_bin - ln_mass(r, a, b)?)
}

fn ln_gamma(v: f64) -> f64 {
    statrs::function::gamma::ln_gamma(v)
}

fn loglik(r: f64, counts: &[(u64, u64)], a: u64, b: u64) -> f64 {
    let Ok(z) = ln_mass(r, a, b) else { return f64::NEG_INFINITY };
    let mut s = 0.0;
    let mut n = 0.0;
    for &(x, m) in counts {
        let xf = x as f64;
        s += m as f64 * (-ln_gamma(xf + 1.0) - ln_gamma(r - xf + 1.0));
        n += m as f64;
    }
    s + n * (ln_gamma(r + 1.0) + r * P.ln() - z)
}

/// Maximum-likelihood `r` for `(count, multiplicity)` pairs.
pub fn dtbin_fit(counts: &[(u64, u64)]) -> Result<DtbinParams> {
    let present: Vec<(u64, u64)> = counts.iter().copied().filter(|&(_, m)| m > 0).collect();
    let mut unique: Vec<u64> = present.iter().map(|&(x, _)| x).collect();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() < MIN_UNIQUE {
        return Err(Error::DegenerateWindow(format!(
            "{} unique counts, at least {MIN_UNIQUE} needed",
            unique.len()
        )));
    }
    let (a, b) = (unique[0], *unique.last().expect("non-empty"));
    let bf = b as f64;
    let f = |t: f64| -loglik(bf + t.exp(), &present, a, b);

    // bracket the optimum on t = ln(r - b), then golden-section search
    let mut lo = -12.0f64;
    let mut hi = (2.0 * bf + 10.0).ln();
    while f(hi) < f(hi - 1.0) && hi < 60.0 {
        hi += 1.0;
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if (hi - lo).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    let r = bf + (0.5 * (lo + hi)).exp();
    if !r.is_finite() {
        return Err(Error::NumericFailure("DTBin likelihood has no finite maximum".into()));
    }
    Ok(DtbinParams { r, a, b })
}

/// Fits DTBin along the fixed-allele axis. Each window starts at one fixed
/// count and grows by a row per side until the variable counts inside show at
/// least four distinct values.
pub fn dtbin_scan(data: &OrientedCounts) -> Vec<DtbinPoint> {
    let Some(max) = data.max_fixed() else { return Vec::new() };
    let mut out = Vec::new();
    for fixed in data.fixed_values() {
        let (mut lo, mut hi) = (fixed, fixed);
        let collect = |lo: u64, hi: u64| -> Vec<(u64, u64)> {
            (lo..=hi).flat_map(|f| data.row(f).iter().copied()).collect()
        };
        let mut counts = collect(lo, hi);
        loop {
            let mut u: Vec<u64> = counts.iter().map(|c| c.0).collect();
            u.sort_unstable();
            u.dedup();
            if u.len() >= MIN_UNIQUE || (lo <= data.l && hi >= max) {
                break;
            }
            lo = lo.saturating_sub(1).max(data.l);
            hi = (hi + 1).min(max);
            counts = collect(lo, hi);
        }
        if let Ok(params) = dtbin_fit(&counts) {
            let n_obs = counts.iter().map(|c| c.1).sum();
            out.push(DtbinPoint { fixed_value: fixed, lo, hi, n_obs, params });
        }
    }
    out
}
