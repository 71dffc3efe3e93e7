//! Count models assembled from the distribution families: linear reference
//! bias, the `r` reparametrization, BAD mixtures, windows and the DTBin
//! diagnostic.
//!
//! The three families are interchangeable [`CountModel`] strategies looked up
//! by name in a [`ModelRegistry`].

mod dtbin;
mod window;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::{
    truncated_mean, BetaNbParams, DistributionSpec, McnbParams, ModelKind, NbParams, Params, Truncation,
};
use crate::error::{Error, Result};
use crate::real::{Dual, Real};

pub use dtbin::{dtbin_fit, dtbin_logpmf, dtbin_scan, DtbinParams, DtbinPoint};
pub use window::{build_window, AlleleCounts, CountTable, Observation, Orientation, OrientedCounts, WindowSlice};

/// Dual number type used for exact gradients of the window objective.
pub type Grad = Dual<4>;

/// `r(x) = b x + a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBias {
    pub b: f64,
    pub a: f64,
}

impl LinearBias {
    pub fn new(b: f64, a: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite() && a.is_finite()) {
            return Err(Error::domain(format!("linear bias needs b > 0 and finite a (b={b}, a={a})")));
        }
        Ok(LinearBias { b, a })
    }

    pub fn raw_r(&self, x: u64) -> Result<f64> {
        let r = self.b * x as f64 + self.a;
        if !(r > 0.0) {
            return Err(Error::domain(format!("b x + a = {r} is not positive at x={x}")));
        }
        Ok(r)
    }
}

/// Background allelic dosage, the major/minor copy-number ratio (`>= 1`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BadValue(f64);

impl BadValue {
    pub const ONE: BadValue = BadValue(1.0);

    pub fn new(bad: f64) -> Result<Self> {
        if !(bad >= 1.0 && bad.is_finite()) {
            return Err(Error::domain(format!("BAD must be a finite value >= 1, got {bad}")));
        }
        Ok(BadValue(bad))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Mixture component probability `BAD / (BAD + 1)`.
    pub fn p(self) -> f64 {
        self.0 / (self.0 + 1.0)
    }

    pub fn is_balanced(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for BadValue {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        BadValue::new(v)
    }
}

impl From<BadValue> for f64 {
    fn from(v: BadValue) -> f64 {
        v.0
    }
}

impl PartialEq for BadValue {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for BadValue {}

impl std::hash::Hash for BadValue {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for BadValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BadValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for BadValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `p = BAD / (BAD + 1)`.
pub fn bad_to_p(bad: f64) -> Result<f64> {
    Ok(BadValue::new(bad)?.p())
}

/// Rescales the linear-bias `r` for the MCNB and BetaNB families (NB is
/// passed through):
///
/// ```text
/// r_MCNB   = r (1 - p^r) / (1 - p)
/// r_BetaNB = r ((1-mu) kappa - 1) / (kappa (1-mu))
/// ```
pub fn reparametrize_r<S: Real>(kind: ModelKind, raw_r: S, p: S, kappa: Option<S>) -> Result<S> {
    let r = match kind {
        ModelKind::Nb => raw_r,
        ModelKind::Mcnb => raw_r * (raw_r * p.ln()).exp().one_minus() / p.one_minus(),
        ModelKind::BetaNb => {
            let kappa = kappa.ok_or_else(|| Error::domain("BetaNB needs kappa"))?;
            let ak = p.one_minus() * kappa;
            raw_r * (ak - 1.0) / ak
        }
    };
    if !(r.value() > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!(
            "reparametrized r = {} is not positive ({kind}, raw r = {}, p = {})",
            r.value(),
            raw_r.value(),
            p.value()
        )));
    }
    Ok(r)
}

/// The `r` handed to the distribution for fixed count `x`.
pub fn effective_r(x: u64, bias: &LinearBias, kind: ModelKind, p: f64, kappa: Option<f64>) -> Result<f64> {
    reparametrize_r(kind, bias.raw_r(x)?, p, kappa)
}

fn family_params<S: Real>(kind: ModelKind, r: S, p: S, kappa: Option<S>) -> Result<Params<S>> {
    let params = match kind {
        ModelKind::Nb => Params::Nb(NbParams { r, p }),
        ModelKind::Mcnb => Params::Mcnb(McnbParams { r, p }),
        ModelKind::BetaNb => Params::BetaNb(BetaNbParams {
            r,
            mu: p,
            kappa: kappa.ok_or_else(|| Error::domain("BetaNB needs kappa"))?,
        }),
    };
    params.validate()?;
    Ok(params)
}

/// One of the interchangeable count families.
pub trait CountModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn description(&self) -> &'static str;

    /// Whether the family carries a concentration parameter.
    fn has_kappa(&self) -> bool {
        false
    }

    /// Admissible `kappa` range at component probability `p`.
    fn kappa_bounds(&self, _p: f64) -> Option<(f64, f64)> {
        None
    }

    /// Distribution for one mixture component: linear-bias `raw_r`, component
    /// probability `p`.
    fn component(&self, raw_r: f64, p: f64, kappa: Option<f64>, trunc: Truncation) -> Result<DistributionSpec> {
        let r = reparametrize_r(self.kind(), raw_r, p, kappa)?;
        Ok(DistributionSpec { params: family_params(self.kind(), r, p, kappa)?, trunc })
    }

    fn component_grad(
        &self,
        raw_r: Grad,
        p: Grad,
        kappa: Option<Grad>,
        trunc: Truncation,
    ) -> Result<DistributionSpec<Grad>> {
        let r = reparametrize_r(self.kind(), raw_r, p, kappa)?;
        Ok(DistributionSpec { params: family_params(self.kind(), r, p, kappa)?, trunc })
    }
}

pub struct NbModel;
pub struct BetaNbModel;
pub struct McnbModel;

impl CountModel for NbModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Nb
    }
    fn description(&self) -> &'static str {
        "negative binomial"
    }
}

/// Upper end of the concentration range.
pub const KAPPA_MAX: f64 = 1e7;

impl CountModel for BetaNbModel {
    fn kind(&self) -> ModelKind {
        ModelKind::BetaNb
    }
    fn description(&self) -> &'static str {
        "beta negative binomial (NB with Beta-distributed p)"
    }
    fn has_kappa(&self) -> bool {
        true
    }
    fn kappa_bounds(&self, p: f64) -> Option<(f64, f64)> {
        // both mixture components need (1 - p) kappa > 1 for a positive r
        let lo = (1.0 / p.min(1.0 - p) + 0.01).max(1.01);
        Some((lo, KAPPA_MAX))
    }
}

impl CountModel for McnbModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mcnb
    }
    fn description(&self) -> &'static str {
        "marginalized compound negative binomial"
    }
}

/// Scalars the window objective can be evaluated in.
pub trait ModelScalar: Real {
    fn component(
        model: &dyn CountModel,
        raw_r: Self,
        p: Self,
        kappa: Option<Self>,
        trunc: Truncation,
    ) -> Result<DistributionSpec<Self>>;
}

impl ModelScalar for f64 {
    fn component(
        model: &dyn CountModel,
        raw_r: f64,
        p: f64,
        kappa: Option<f64>,
        trunc: Truncation,
    ) -> Result<DistributionSpec> {
        model.component(raw_r, p, kappa, trunc)
    }
}

impl ModelScalar for Grad {
    fn component(
        model: &dyn CountModel,
        raw_r: Grad,
        p: Grad,
        kappa: Option<Grad>,
        trunc: Truncation,
    ) -> Result<DistributionSpec<Grad>> {
        model.component_grad(raw_r, p, kappa, trunc)
    }
}

/// Name-indexed collection of count models.
pub struct ModelRegistry {
    models: Vec<Box<dyn CountModel>>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry { models: Vec::new() }
    }

    /// NB, BetaNB and MCNB.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(NbModel));
        reg.register(Box::new(BetaNbModel));
        reg.register(Box::new(McnbModel));
        reg
    }

    /// Adds a model, replacing any existing one with the same name.
    pub fn register(&mut self, model: Box<dyn CountModel>) {
        self.models.retain(|m| !m.name().eq_ignore_ascii_case(model.name()));
        self.models.push(model);
    }

    pub fn get(&self, name: &str) -> Result<&dyn CountModel> {
        self.models
            .iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown model '{name}' (available: {})", self.names().join(", ")))
            })
    }

    pub fn for_kind(&self, kind: ModelKind) -> Result<&dyn CountModel> {
        self.get(kind.name())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.iter().map(|m| m.name()).collect()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

/// The standard registry's entry for `kind`.
pub fn model_for(kind: ModelKind) -> &'static dyn CountModel {
    match kind {
        ModelKind::Nb => &NbModel,
        ModelKind::BetaNb => &BetaNbModel,
        ModelKind::Mcnb => &McnbModel,
    }
}

/// `w f(x | p) + (1 - w) f(x | 1 - p)`, each component truncated on its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams<S = f64> {
    pub w: S,
    pub major: DistributionSpec<S>,
    pub minor: DistributionSpec<S>,
}

impl<S: ModelScalar> MixtureParams<S> {
    /// Both components from the linear-bias `raw_r`; the minor component
    /// uses `1 - p`.
    pub fn build(
        model: &dyn CountModel,
        raw_r: S,
        p: S,
        kappa: Option<S>,
        w: S,
        trunc: Truncation,
    ) -> Result<Self> {
        if !(w.value() >= 0.0 && w.value() <= 1.0) {
            return Err(Error::domain(format!("mixture weight {} outside [0,1]", w.value())));
        }
        let major = S::component(model, raw_r, p, kappa, trunc)?;
        let minor = S::component(model, raw_r, p.one_minus(), kappa, trunc)?;
        Ok(MixtureParams { w, major, minor })
    }
}

impl<S: Real> MixtureParams<S> {
    fn symmetric(&self) -> bool {
        self.major == self.minor
    }

    /// Combines per-component truncated log-PMFs.
    pub fn combine(&self, l_major: S, l_minor: S) -> S {
        mix_logs(self.w, l_major, l_minor)
    }
}

/// `ln(w e^a + (1 - w) e^b)` with finite derivatives at `w in {0, 1}`.
pub(crate) fn mix_logs<S: Real>(w: S, a: S, b: S) -> S {
    let (va, vb) = (a.value(), b.value());
    if va == f64::NEG_INFINITY && vb == f64::NEG_INFINITY {
        return a;
    }
    if vb == f64::NEG_INFINITY {
        return w.ln() + a;
    }
    if va == f64::NEG_INFINITY {
        return w.one_minus().ln() + b;
    }
    let m = va.max(vb);
    let s = w * (a - m).exp() + w.one_minus() * (b - m).exp();
    s.ln() + m
}

/// Truncated mixture log-PMF.
pub fn mixture_logpmf<S: Real>(x: u64, mix: &MixtureParams<S>) -> Result<S> {
    if mix.major.trunc != mix.minor.trunc {
        return Err(Error::domain("mixture components must share the truncation threshold"));
    }
    let a = mix.major.ln_pmf_truncated(x)?;
    if mix.symmetric() {
        return Ok(a);
    }
    let b = mix.minor.ln_pmf_truncated(x)?;
    Ok(mix.combine(a, b))
}

/// Truncated mixture log-PMF at each of `xs`, sharing the normalizers and
/// any PMF tables between points.
pub fn mixture_logpmf_many<S: Real>(xs: &[u64], mix: &MixtureParams<S>) -> Result<Vec<S>> {
    if mix.major.trunc != mix.minor.trunc {
        return Err(Error::domain("mixture components must share the truncation threshold"));
    }
    let l = mix.major.trunc.l;
    let component = |spec: &DistributionSpec<S>| -> Result<Vec<S>> {
        let z = spec.ln_normalizer()?;
        let raw = spec.ln_pmf_many(xs)?;
        Ok(raw
            .into_iter()
            .zip(xs)
            .map(|(v, &x)| if x < l { S::cst(f64::NEG_INFINITY) } else { v - z })
            .collect())
    };
    let a = component(&mix.major)?;
    if mix.symmetric() {
        return Ok(a);
    }
    let b = component(&mix.minor)?;
    Ok(a.into_iter().zip(b).map(|(u, v)| mix.combine(u, v)).collect())
}

/// `ln P(Z >= x)` under the truncated mixture.
pub fn mixture_ln_tail(x: u64, mix: &MixtureParams) -> Result<f64> {
    let a = mix.major.right_tail_logp(x)?;
    if mix.symmetric() {
        return Ok(a);
    }
    let b = mix.minor.right_tail_logp(x)?;
    Ok(mix_logs(mix.w, a, b))
}

/// Mean of the truncated mixture.
pub fn mixture_truncated_mean(mix: &MixtureParams) -> Result<f64> {
    let a = truncated_mean(&mix.major)?;
    if mix.symmetric() || mix.w == 1.0 {
        return Ok(a);
    }
    let b = truncated_mean(&mix.minor)?;
    Ok(mix.w * a + (1.0 - mix.w) * b)
}
