//! Reference distributions for test statistics.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::specfun::ln_reg_inc_beta_pair;

/// Two-sided standard normal p-value `P(|Z| >= |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(stat: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    erfc((0.5 * stat).sqrt())
}

/// `ln P(T >= t)` for Student's t with `nu` degrees of freedom.
pub fn ln_student_t_sf(t: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || t.is_nan() {
        return Err(Error::domain(format!("Student t tail needs nu > 0 (nu={nu}, t={t})")));
    }
    if t == 0.0 {
        return Ok(0.5f64.ln());
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { f64::NEG_INFINITY } else { 0.0 });
    }
    // P(|T| >= |t|) = I_{nu/(nu+t^2)}(nu/2, 1/2), computed without forming 1 - z
    let t2 = t * t;
    let z = nu / (nu + t2);
    let (ln_two_sided, ln_inner) = if z < 1.0 {
        ln_reg_inc_beta_pair(z, 0.5 * nu, 0.5)?
    } else {
        (0.0, f64::NEG_INFINITY)
    };
    let half = 0.5f64.ln();
    if t > 0.0 {
        Ok(ln_two_sided + half)
    } else {
        // 1 - 0.5 I = 0.5 (1 + (1 - I))
        Ok(half + ln_inner.exp().ln_1p())
    }
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}
