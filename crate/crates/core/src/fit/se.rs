//! Standard errors from the observed information.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grad, WindowSlice};

use super::{FitSettings, Layout, ParameterVector, WindowData};

/// Standard errors of the free parameters; `None` for fixed parameters and
/// for parameters on a bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub b: Option<f64>,
    pub a: Option<f64>,
    pub kappa: Option<f64>,
    pub w: Option<f64>,
}

/// Hessian by central differences of an exact gradient, with steps
/// `h_i = eps^(1/3) max(1, |theta_i|)`. The result is symmetrized.
pub fn hessian_from_gradient<G>(grad: G, theta: &[f64]) -> Vec<Vec<f64>>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = theta.len();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        let step = f64::EPSILON.cbrt() * theta[i].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[i] += step;
        dn[i] -= step;
        let (gu, gd) = (grad(&up), grad(&dn));
        for j in 0..n {
            h[i][j] = (gu[j] - gd[j]) / (up[i] - dn[i]);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// `sqrt(diag((-H)^-1))`; `-H` must be positive definite.
pub fn se_from_hessian(h: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = h.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let info = DMatrix::from_fn(n, n, |i, j| -h[i][j]);
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInformation);
    }
    let chol = info.cholesky().ok_or(Error::SingularInformation)?;
    let inv = chol.inverse();
    (0..n)
        .map(|i| {
            let v = inv[(i, i)];
            if v > 0.0 && v.is_finite() {
                Ok(v.sqrt())
            } else {
                Err(Error::SingularInformation)
            }
        })
        .collect()
}

/// Standard errors of the unpenalized window log-likelihood at `theta`.
pub fn std_errors(theta: &ParameterVector, slice: &WindowSlice, settings: &FitSettings) -> Result<StdErrors> {
    let data = WindowData::new(slice, settings.model_kind, settings.truncation());
    let layout = Layout::new(&data, theta)?;
    std_errors_data(theta, &data, &layout.lower, &layout.upper)
}

pub(super) fn std_errors_data(
    theta: &ParameterVector,
    data: &WindowData,
    lower: &[f64; 5],
    upper: &[f64; 5],
) -> Result<StdErrors> {
    // natural coordinates: b, a, kappa, w
    let has_kappa = data.model.has_kappa();
    let natural = [theta.b, theta.a, theta.kappa.unwrap_or(0.0), theta.w];
    let nat_lower = [lower[0], lower[1], lower[3].exp(), lower[4]];
    let nat_upper = [upper[0], upper[1], upper[3].exp(), upper[4]];
    let free: Vec<usize> = (0..4)
        .filter(|&i| i != 2 || has_kappa)
        .filter(|&i| nat_lower[i] < nat_upper[i])
        .filter(|&i| {
            let step = f64::EPSILON.cbrt() * natural[i].abs().max(1.0);
            natural[i] - step > nat_lower[i] && natural[i] + step < nat_upper[i]
        })
        .collect();
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut full = natural;
        for (k, &i) in free.iter().enumerate() {
            full[i] = x[k];
        }
        let v = data.loglik(
            Grad::var(full[0], 0),
            Grad::var(full[1], 1),
            Grad::constant(theta.mu_or_p),
            has_kappa.then(|| Grad::var(full[2], 2)),
            Grad::var(full[3], 3),
        );
        free.iter().map(|&i| v.d[i]).collect()
    };
    let x: Vec<f64> = free.iter().map(|&i| natural[i]).collect();
    let h = hessian_from_gradient(grad, &x);
    let se = se_from_hessian(&h)?;
    let mut out = StdErrors::default();
    for (k, &i) in free.iter().enumerate() {
        let slot = match i {
            0 => &mut out.b,
            1 => &mut out.a,
            2 => &mut out.kappa,
            _ => &mut out.w,
        };
        *slot = Some(se[k]);
    }
    Ok(out)
}
