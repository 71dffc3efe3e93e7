//! Sliding-window maximum-likelihood and MAP estimation.
//!
//! Each window is fitted by maximizing the multiplicity-weighted truncated
//! mixture log-likelihood over `(b, a, kappa, w)` with `p` fixed by BAD.
//! Gradients are exact: the objective is evaluated in dual numbers, which
//! also differentiates the truncation normalizers through their continued
//! fractions.

mod global;
mod optim;
mod se;

use serde::{Deserialize, Serialize};

use crate::dist::{ModelKind, Truncation, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};
use crate::model::{
    mixture_logpmf_many, model_for, BadValue, CountModel, Grad, LinearBias, MixtureParams, ModelScalar, WindowSlice,
};
use crate::real::{Dual, Real};

pub use global::{fit_global, fit_partition, EstimateKey, EstimateTable};
pub use optim::{minimize_box, projected_gradient_norm, OptimResult};
pub use se::{hessian_from_gradient, se_from_hessian, std_errors, StdErrors};

/// Stand-in for `-inf` log-likelihoods.
pub const SENTINEL: f64 = -1e18;

pub const B_BOUNDS: (f64, f64) = (0.01, 100.0);
pub const A_BOUNDS: (f64, f64) = (0.0, 1000.0);
pub const P_BOUNDS: (f64, f64) = (0.01, 0.99);
pub const W_BOUNDS: (f64, f64) = (0.0, 1.0);
/// Lower bound on `a` when the window contains the fixed count 0.
const A_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub model_kind: ModelKind,
    /// Target number of observations per window.
    pub m: u64,
    /// Multiplier of the Laplace scale in the `kappa` prior; 0 disables it.
    pub alpha: f64,
    /// Truncation threshold.
    pub l: u64,
    pub optimizer_tol: f64,
    pub max_evals: usize,
    pub estimate_se: bool,
}

impl FitSettings {
    pub fn new(model_kind: ModelKind) -> Self {
        FitSettings {
            model_kind,
            m: 10_000,
            alpha: 0.0,
            l: DEFAULT_TRUNCATION,
            optimizer_tol: 1e-8,
            max_evals: 2000,
            estimate_se: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("window size m must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.optimizer_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("optimizer_tol must be > 0, got {}", self.optimizer_tol)));
        }
        if self.max_evals == 0 {
            return Err(Error::InvalidArgument("max_evals must be positive".into()));
        }
        Ok(())
    }

    pub fn truncation(&self) -> Truncation {
        Truncation { l: self.l }
    }

    pub fn model(&self) -> &'static dyn CountModel {
        model_for(self.model_kind)
    }
}

impl Default for FitSettings {
    fn default() -> Self {
        Self::new(ModelKind::Nb)
    }
}

/// Free parameters of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub b: f64,
    pub a: f64,
    pub mu_or_p: f64,
    pub kappa: Option<f64>,
    pub w: f64,
}

impl ParameterVector {
    /// Starting point: `b = 1`, `a = l/2`, `p = BAD/(BAD+1)`, `kappa = 100`,
    /// `w = 0.8` (`w = 1` when both components coincide).
    pub fn initial(settings: &FitSettings, bad: BadValue) -> Self {
        let p = bad.p();
        let model = settings.model();
        let kappa = model.kappa_bounds(p).map(|(lo, hi)| 100f64.clamp(lo, hi));
        ParameterVector {
            b: 1.0,
            a: 0.5 * settings.l as f64,
            mu_or_p: p,
            kappa,
            w: if bad.is_balanced() { 1.0 } else { 0.8 },
        }
    }

    pub fn bias(&self) -> Result<LinearBias> {
        LinearBias::new(self.b, self.a)
    }

    /// The truncated mixture for the variable count at fixed count `x`.
    pub fn mixture(&self, model: &dyn CountModel, x: u64, trunc: Truncation) -> Result<MixtureParams> {
        let raw = self.bias()?.raw_r(x)?;
        MixtureParams::build(model, raw, self.mu_or_p, self.kappa, self.w, trunc)
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Result of fitting one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub fixed_value: u64,
    pub lo: u64,
    pub hi: u64,
    pub n_obs: u64,
    pub theta: ParameterVector,
    /// Unpenalized log-likelihood at `theta`.
    #[serde(with = "nan_as_null")]
    pub loglik: f64,
    /// Log-likelihood minus the MAP penalty.
    #[serde(with = "nan_as_null")]
    pub objective: f64,
    pub std_errors: Option<StdErrors>,
    /// Set for regularized fits, whose standard errors are not meaningful.
    pub se_unreliable: bool,
    pub converged: bool,
    pub evals: usize,
    /// Free parameters that ended on a box bound.
    pub at_bounds: Vec<String>,
    /// Why the window could not be fitted.
    pub error: Option<String>,
    /// Diagnostic for windows that were fitted but are not fully identified.
    pub note: Option<String>,
}

impl WindowEstimate {
    pub fn failed(fixed_value: u64, init: ParameterVector, err: &Error) -> Self {
        WindowEstimate {
            fixed_value,
            lo: fixed_value,
            hi: fixed_value,
            n_obs: 0,
            theta: init,
            loglik: f64::NAN,
            objective: f64::NAN,
            std_errors: None,
            se_unreliable: false,
            converged: false,
            evals: 0,
            at_bounds: Vec::new(),
            error: Some(err.to_string()),
            note: None,
        }
    }

    /// An estimate supplied from outside the optimizer, e.g. a known truth.
    pub fn given(fixed_value: u64, theta: ParameterVector) -> Self {
        WindowEstimate {
            fixed_value,
            lo: fixed_value,
            hi: fixed_value,
            n_obs: 0,
            theta,
            loglik: f64::NAN,
            objective: f64::NAN,
            std_errors: None,
            se_unreliable: false,
            converged: true,
            evals: 0,
            at_bounds: Vec::new(),
            error: None,
            note: None,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.error.is_none()
    }
}

/// A window's observations grouped by fixed count.
pub(crate) struct WindowData {
    rows: Vec<(u64, Vec<u64>, Vec<f64>)>,
    n_obs: u64,
    x_min: u64,
    fixed_value: u64,
    trunc: Truncation,
    model: &'static dyn CountModel,
}

impl WindowData {
    pub(crate) fn new(slice: &WindowSlice, kind: ModelKind, trunc: Truncation) -> Self {
        let mut obs = slice.observations.clone();
        obs.sort_unstable_by_key(|o| (o.fixed, o.variable));
        let mut rows: Vec<(u64, Vec<u64>, Vec<f64>)> = Vec::new();
        for o in obs.iter().filter(|o| o.mult > 0) {
            match rows.last_mut() {
                Some((f, xs, ms)) if *f == o.fixed => {
                    xs.push(o.variable);
                    ms.push(o.mult as f64);
                }
                _ => rows.push((o.fixed, vec![o.variable], vec![o.mult as f64])),
            }
        }
        WindowData {
            x_min: rows.first().map(|r| r.0).unwrap_or(0),
            n_obs: slice.observations.iter().map(|o| o.mult).sum(),
            rows,
            fixed_value: slice.fixed_value,
            trunc,
            model: model_for(kind),
        }
    }

    /// Weighted log-likelihood; any failure or `-inf` term gives [`SENTINEL`].
    pub(crate) fn loglik<S: ModelScalar>(&self, b: S, a: S, p: S, kappa: Option<S>, w: S) -> S {
        let mut total = S::cst(0.0);
        for (fixed, xs, ms) in &self.rows {
            let raw = b * *fixed as f64 + a;
            let Ok(mix) = MixtureParams::build(self.model, raw, p, kappa, w, self.trunc) else {
                return S::cst(SENTINEL);
            };
            let Ok(vals) = mixture_logpmf_many(xs, &mix) else {
                return S::cst(SENTINEL);
            };
            for (v, m) in vals.into_iter().zip(ms) {
                if !v.is_finite() {
                    return S::cst(SENTINEL);
                }
                total += v * *m;
            }
        }
        if !total.is_finite() {
            return S::cst(SENTINEL);
        }
        total
    }

    /// Why `(b, a)` cannot both be identified from this window, if so.
    fn degeneracy(&self) -> Option<String> {
        if self.rows.len() < 2 {
            return Some("single fixed count: only b x + a is identified".into());
        }
        let mut ys: Vec<u64> = self.rows.iter().flat_map(|r| r.1.iter().copied()).collect();
        ys.sort_unstable();
        ys.dedup();
        (ys.len() < 2).then(|| "single variable count".into())
    }

    fn loglik_at(&self, theta: &ParameterVector) -> f64 {
        self.loglik(theta.b, theta.a, theta.mu_or_p, theta.kappa, theta.w)
    }
}

/// `sum_i mult_i ln f_mix(y_i | x_i)` over the window.
pub fn window_loglik(theta: &ParameterVector, slice: &WindowSlice, settings: &FitSettings) -> f64 {
    WindowData::new(slice, settings.model_kind, settings.truncation()).loglik_at(theta)
}

/// Window log-likelihood and its gradient in `(b, a, kappa, w)`; the `kappa`
/// entry is 0 for families without it.
pub fn window_loglik_gradient(theta: &ParameterVector, slice: &WindowSlice, settings: &FitSettings) -> (f64, [f64; 4]) {
    let data = WindowData::new(slice, settings.model_kind, settings.truncation());
    let v = data.loglik(
        Grad::var(theta.b, 0),
        Grad::var(theta.a, 1),
        Grad::constant(theta.mu_or_p),
        theta.kappa.map(|k| Grad::var(k, 2)),
        Grad::var(theta.w, 3),
    );
    (v.v, v.d)
}

/// Negative log-density of the `kappa` prior (`1/kappa ~ Laplace(0, alpha n y)`)
/// scaled by `n`, to be subtracted from the log-likelihood.
pub fn map_penalty(kappa: f64, alpha: f64, y_fixed: u64, n_obs: u64) -> Result<f64> {
    map_penalty_generic(kappa, alpha, y_fixed, n_obs)
}

fn map_penalty_generic<S: Real>(kappa: S, alpha: f64, y_fixed: u64, n_obs: u64) -> Result<S> {
    if alpha == 0.0 {
        return Ok(S::cst(0.0));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("alpha must be >= 0, got {alpha}")));
    }
    if y_fixed == 0 {
        return Err(Error::domain("the kappa prior scale is zero at fixed value 0"));
    }
    if !(kappa.value() > 0.0) {
        return Err(Error::domain(format!("kappa must be positive, got {}", kappa.value())));
    }
    let n = n_obs as f64;
    let scale = alpha * n * y_fixed as f64;
    Ok(((kappa * scale).recip() + (2.0 * scale).ln() + kappa.ln() * 2.0) * n)
}

/// Layout of the optimizer vector: `[b, a, p, ln kappa, w]`.
struct Layout {
    lower: [f64; 5],
    upper: [f64; 5],
}

impl Layout {
    fn new(data: &WindowData, init: &ParameterVector) -> Result<Self> {
        let p = init.mu_or_p;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("component probability {p} outside (0,1)")));
        }
        let a_lo = if data.x_min == 0 { A_BOUNDS.0.max(A_FLOOR) } else { A_BOUNDS.0 };
        let (k_lo, k_hi) = match data.model.kappa_bounds(p) {
            Some((lo, hi)) => (lo.ln(), hi.ln()),
            None => (0.0, 0.0),
        };
        let (w_lo, w_hi) = if p == 0.5 { (1.0, 1.0) } else { W_BOUNDS };
        Ok(Layout {
            lower: [B_BOUNDS.0, a_lo, p, k_lo, w_lo],
            upper: [B_BOUNDS.1, A_BOUNDS.1, p, k_hi, w_hi],
        })
    }

    fn pack(&self, theta: &ParameterVector) -> Vec<f64> {
        let mut x = vec![theta.b, theta.a, theta.mu_or_p, theta.kappa.map(f64::ln).unwrap_or(0.0), theta.w];
        for i in 0..5 {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
        x
    }

    fn unpack(&self, x: &[f64], has_kappa: bool) -> ParameterVector {
        ParameterVector { b: x[0], a: x[1], mu_or_p: x[2], kappa: has_kappa.then(|| x[3].exp()), w: x[4] }
    }

    fn at_bounds(&self, x: &[f64]) -> Vec<String> {
        const NAMES: [&str; 5] = ["b", "a", "p", "kappa", "w"];
        (0..5)
            .filter(|&i| self.lower[i] < self.upper[i])
            .filter(|&i| {
                let tol = 1e-9 * self.lower[i].abs().max(self.upper[i].abs()).max(1.0);
                x[i] - self.lower[i] <= tol || self.upper[i] - x[i] <= tol
            })
            .map(|i| NAMES[i].to_string())
            .collect()
    }
}

/// Maximizes the penalized window log-likelihood from `init`.
///
/// Failures to converge are reported in the estimate, never returned as
/// errors; an `Err` means the window itself is unusable.
pub fn fit_window(slice: &WindowSlice, settings: &FitSettings, init: &ParameterVector) -> Result<WindowEstimate> {
    settings.validate()?;
    if slice.is_empty() {
        return Err(Error::EmptyWindow { fixed_value: slice.fixed_value });
    }
    let data = WindowData::new(slice, settings.model_kind, settings.truncation());
    fit_window_data(&data, slice, settings, init)
}

fn fit_window_data(
    data: &WindowData,
    slice: &WindowSlice,
    settings: &FitSettings,
    init: &ParameterVector,
) -> Result<WindowEstimate> {
    let has_kappa = data.model.has_kappa();
    let layout = Layout::new(data, init)?;
    let n = data.n_obs as f64;
    let (alpha, y) = (settings.alpha, data.fixed_value);
    if alpha > 0.0 && has_kappa && y == 0 {
        return Err(Error::domain("the kappa prior scale is zero at fixed value 0"));
    }
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let kappa = has_kappa.then(|| Grad::var(x[3], 2).exp());
        let ll = data.loglik(
            Grad::var(x[0], 0),
            Grad::var(x[1], 1),
            Grad::constant(x[2]),
            kappa,
            Grad::var(x[4], 3),
        );
        let pen = match kappa {
            Some(k) if alpha > 0.0 => map_penalty_generic(k, alpha, y, data.n_obs).unwrap_or(Dual::constant(f64::INFINITY)),
            _ => Grad::constant(0.0),
        };
        let f = (pen - ll) / n;
        (f.v, vec![f.d[0], f.d[1], 0.0, f.d[2], f.d[3]])
    };
    let x0 = layout.pack(init);
    let res = minimize_box(objective, &x0, &layout.lower, &layout.upper, settings.optimizer_tol, settings.max_evals);
    let theta = layout.unpack(&res.x, has_kappa);
    let loglik = data.loglik_at(&theta);
    let penalty = match theta.kappa {
        Some(k) if alpha > 0.0 => map_penalty(k, alpha, y, data.n_obs)?,
        _ => 0.0,
    };
    let finite = loglik > SENTINEL / 2.0;
    let mut est = WindowEstimate {
        fixed_value: slice.fixed_value,
        lo: slice.lo,
        hi: slice.hi,
        n_obs: data.n_obs,
        theta,
        loglik,
        objective: loglik - penalty,
        std_errors: None,
        se_unreliable: alpha > 0.0 && has_kappa,
        converged: res.converged && finite,
        evals: res.evals,
        at_bounds: layout.at_bounds(&res.x),
        error: (!finite).then(|| "log-likelihood is not finite over the window".to_string()),
        note: data.degeneracy(),
    };
    if est.note.is_some() {
        est.converged = false;
    }
    if settings.estimate_se && finite {
        est.std_errors = se::std_errors_data(&theta, data, &layout.lower, &layout.upper).ok();
    }
    Ok(est)
}
