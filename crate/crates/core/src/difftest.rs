//! Differential allele-specificity between a control and a test group.
//!
//! Window parameters other than `p` are frozen at the global fit. Each group
//! gets its own one-dimensional MLE of `p`; the constrained model refits one
//! `p` on the pooled observations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{EstimateTable, ParameterVector, P_BOUNDS};
use crate::model::{mixture_logpmf, AlleleCounts, BadValue, CountModel, Grad, MixtureParams, ModelScalar, Orientation};
use crate::stats::{chi2_1_sf, normal_two_sided};

/// Slack allowed when the free model's log-likelihood falls below the constrained one.
pub const NESTING_TOL: f64 = 1e-6;

const GRID_POINTS: usize = 49;
const BISECTION_STEPS: usize = 80;

/// One-dimensional MLE of `p` for one group and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefitResult {
    pub p: f64,
    pub loglik: f64,
    /// Observed information `-d2 loglik / dp2` at `p`.
    pub info: f64,
    /// The maximum lies on the edge of the admissible interval.
    pub boundary: bool,
    pub n_used: u64,
    /// Observations without a usable window or below the truncation threshold.
    pub n_dropped: u64,
}

struct Row {
    theta: ParameterVector,
    fixed: u64,
    variable: u64,
    mult: u64,
}

struct GroupLikelihood<'a> {
    rows: Vec<Row>,
    model: &'a dyn CountModel,
    estimates: &'a EstimateTable,
    lo: f64,
    hi: f64,
}

impl<'a> GroupLikelihood<'a> {
    fn new(obs: &[AlleleCounts], estimates: &'a EstimateTable, orientation: Orientation) -> (Self, u64) {
        let settings = &estimates.settings;
        let mut grouped: BTreeMap<(BadValue, u64, u64), u64> = BTreeMap::new();
        let mut dropped = 0;
        for o in obs {
            let (fixed, variable) = o.split(orientation);
            if fixed < settings.l || variable < settings.l || estimates.get(orientation, o.bad, fixed).is_err() {
                dropped += 1;
                continue;
            }
            *grouped.entry((o.bad, fixed, variable)).or_insert(0) += 1;
        }
        let rows: Vec<Row> = grouped
            .into_iter()
            .map(|((bad, fixed, variable), mult)| Row {
                theta: estimates.get(orientation, bad, fixed).expect("checked above").theta,
                fixed,
                variable,
                mult,
            })
            .collect();
        // the reparametrized size must stay positive for both p and 1 - p
        let kappa_min = rows.iter().filter_map(|r| r.theta.kappa).fold(f64::INFINITY, f64::min);
        let edge = if kappa_min.is_finite() { (1.0 / kappa_min) * (1.0 + 1e-6) } else { 0.0 };
        let lo = P_BOUNDS.0.max(edge);
        let hi = P_BOUNDS.1.min(1.0 - edge);
        let model = settings.model();
        (GroupLikelihood { rows, model, estimates, lo, hi }, dropped)
    }

    fn n_used(&self) -> u64 {
        self.rows.iter().map(|r| r.mult).sum()
    }

    fn eval<S: ModelScalar>(&self, p: S) -> S {
        let trunc = self.estimates.settings.truncation();
        let mut acc = S::cst(0.0);
        for row in &self.rows {
            let t = &row.theta;
            let v = t.bias().and_then(|b| b.raw_r(row.fixed)).and_then(|raw| {
                let mix = MixtureParams::build(
                    self.model,
                    S::cst(raw),
                    p,
                    t.kappa.map(S::cst),
                    S::cst(t.w),
                    trunc,
                )?;
                mixture_logpmf(row.variable, &mix)
            });
            match v {
                Ok(v) if v.value().is_finite() => acc = acc + v * (row.mult as f64),
                _ => return S::cst(f64::NEG_INFINITY),
            }
        }
        acc
    }

    fn value(&self, p: f64) -> f64 {
        self.eval(p)
    }

    fn slope(&self, p: f64) -> f64 {
        let v: Grad = self.eval(Grad::var(p, 0));
        if v.v.is_finite() {
            v.d[0]
        } else {
            f64::NAN
        }
    }
}

/// Maximizes the group log-likelihood over `p` with the other window
/// parameters frozen.
pub fn refit_p(obs: &[AlleleCounts], estimates: &EstimateTable, orientation: Orientation) -> Result<RefitResult> {
    let (g, n_dropped) = GroupLikelihood::new(obs, estimates, orientation);
    if g.rows.is_empty() {
        return Err(Error::domain(format!(
            "no observations with a usable {orientation} window ({n_dropped} dropped)"
        )));
    }
    if !(g.lo < g.hi) {
        return Err(Error::domain("no admissible p for the frozen concentration"));
    }
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| g.lo + (g.hi - g.lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&p| g.value(p)).collect();
    let k = (0..GRID_POINTS)
        .filter(|&i| values[i].is_finite())
        .max_by(|&i, &j| values[i].total_cmp(&values[j]).then(j.cmp(&i)))
        .ok_or_else(|| Error::NumericFailure("group log-likelihood is not finite for any p".into()))?;

    let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(GRID_POINTS - 1)]);
    let p = if k == 0 && !(g.slope(g.lo) > 0.0) {
        g.lo
    } else if k == GRID_POINTS - 1 && !(g.slope(g.hi) < 0.0) {
        g.hi
    } else {
        let (mut ga, mut gb) = (g.slope(a), g.slope(b));
        if k == 0 {
            ga = 1.0;
        }
        if k == GRID_POINTS - 1 {
            gb = -1.0;
        }
        if ga > 0.0 && gb < 0.0 {
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                let gm = g.slope(mid);
                if gm > 0.0 {
                    a = mid;
                } else if gm < 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    b = mid;
                }
            }
            0.5 * (a + b)
        } else {
            golden_max(|p| g.value(p), a, b)
        }
    };
    let loglik = g.value(p);
    if !loglik.is_finite() {
        return Err(Error::NonConvergence { iterations: BISECTION_STEPS });
    }
    let h = f64::EPSILON.cbrt() * p.abs().max(1.0);
    let (up, dn) = ((p + h).min(g.hi), (p - h).max(g.lo));
    let info = -(g.slope(up) - g.slope(dn)) / (up - dn);
    let boundary = p - g.lo < 1e-8 || g.hi - p < 1e-8;
    Ok(RefitResult { p, loglik, info, boundary, n_used: g.n_used(), n_dropped })
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `z = (p_c - p_t) / sqrt(1/info_c + 1/info_t)`.
pub fn wald_statistic(p_c: f64, info_c: f64, p_t: f64, info_t: f64) -> Result<f64> {
    if !(info_c > 0.0) || !(info_t > 0.0) {
        return Err(Error::domain(format!("Wald test needs positive information (got {info_c}, {info_t})")));
    }
    Ok((p_c - p_t) / (1.0 / info_c + 1.0 / info_t).sqrt())
}

/// Two-sided normal p-value of the Wald statistic.
pub fn wald_test(p_c: f64, info_c: f64, p_t: f64, info_t: f64) -> Result<f64> {
    Ok(normal_two_sided(wald_statistic(p_c, info_c, p_t, info_t)?))
}

/// `2 (loglik_free - loglik_constrained)`, clamped at 0 within [`NESTING_TOL`].
pub fn lrt_statistic(loglik_free: f64, loglik_constrained: f64) -> Result<f64> {
    if loglik_free < loglik_constrained - NESTING_TOL {
        return Err(Error::NestingViolation { free: loglik_free, constrained: loglik_constrained });
    }
    Ok((2.0 * (loglik_free - loglik_constrained)).max(0.0))
}

/// Upper `chi2(1)` tail of the likelihood-ratio statistic.
pub fn lrt(loglik_free: f64, loglik_constrained: f64) -> Result<f64> {
    Ok(chi2_1_sf(lrt_statistic(loglik_free, loglik_constrained)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiffMethod {
    #[serde(rename = "wald")]
    Wald,
    #[serde(rename = "lrt")]
    Lrt,
}

impl DiffMethod {
    pub fn name(self) -> &'static str {
        match self {
            DiffMethod::Wald => "wald",
            DiffMethod::Lrt => "lrt",
        }
    }
}

impl fmt::Display for DiffMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiffMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DiffTestRegistry::standard().get(s).map(|m| m.kind())
    }
}

/// Refits of one orientation that a test statistic is built from.
#[derive(Debug, Clone, Copy)]
pub struct GroupFits {
    pub control: RefitResult,
    pub test: RefitResult,
    pub pooled: Option<RefitResult>,
}

/// A two-group test of equal `p`.
pub trait DiffTestMethod: Send + Sync {
    fn kind(&self) -> DiffMethod;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn description(&self) -> &'static str;

    /// Whether [`DiffTestMethod::test`] reads the pooled refit.
    fn needs_pooled(&self) -> bool;

    /// `(statistic, p-value)`.
    fn test(&self, fits: &GroupFits) -> Result<(f64, f64)>;
}

pub struct WaldMethod;
pub struct LrtMethod;

impl DiffTestMethod for WaldMethod {
    fn kind(&self) -> DiffMethod {
        DiffMethod::Wald
    }

    fn description(&self) -> &'static str {
        "normal approximation to the difference of the two MLEs"
    }

    fn needs_pooled(&self) -> bool {
        false
    }

    fn test(&self, f: &GroupFits) -> Result<(f64, f64)> {
        let z = wald_statistic(f.control.p, f.control.info, f.test.p, f.test.info)?;
        Ok((z, normal_two_sided(z)))
    }
}

impl DiffTestMethod for LrtMethod {
    fn kind(&self) -> DiffMethod {
        DiffMethod::Lrt
    }

    fn description(&self) -> &'static str {
        "likelihood ratio of separate against pooled p, chi-square with one degree of freedom"
    }

    fn needs_pooled(&self) -> bool {
        true
    }

    fn test(&self, f: &GroupFits) -> Result<(f64, f64)> {
        let pooled = f.pooled.ok_or_else(|| Error::domain("likelihood-ratio test needs the pooled refit"))?;
        let stat = lrt_statistic(f.control.loglik + f.test.loglik, pooled.loglik)?;
        Ok((stat, chi2_1_sf(stat)))
    }
}

/// Test methods by name.
pub struct DiffTestRegistry {
    methods: Vec<Box<dyn DiffTestMethod>>,
}

impl DiffTestRegistry {
    pub fn empty() -> Self {
        DiffTestRegistry { methods: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(WaldMethod));
        r.register(Box::new(LrtMethod));
        r
    }

    /// Adds a method, replacing any with the same name.
    pub fn register(&mut self, method: Box<dyn DiffTestMethod>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DiffTestMethod> {
        self.methods
            .iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown test method '{name}' (expected one of {})", self.names().join(", ")))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

/// Result of the differential test of one SNV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffTestRecord {
    pub snv: String,
    pub method: DiffMethod,
    /// Orientation whose p-value was selected.
    pub orientation: Orientation,
    pub p_control: f64,
    pub p_test: f64,
    pub se_control: Option<f64>,
    pub se_test: Option<f64>,
    pub statistic: f64,
    /// P-value of the `ref|alt` orientation.
    pub pval_side1: Option<f64>,
    /// P-value of the `alt|ref` orientation.
    pub pval_side2: Option<f64>,
    pub final_pval: f64,
    pub n_control: u64,
    pub n_test: u64,
    pub boundary: bool,
}

fn se(info: f64) -> Option<f64> {
    (info > 0.0 && info.is_finite()).then(|| info.sqrt().recip())
}

/// Both orientations of the test; the final p-value is the smaller one.
pub fn difftest_snv(
    snv: &str,
    control: &[AlleleCounts],
    test: &[AlleleCounts],
    estimates: &EstimateTable,
    method: &dyn DiffTestMethod,
) -> Result<DiffTestRecord> {
    if control.is_empty() || test.is_empty() {
        return Err(Error::domain(format!("SNV {snv} is missing from one of the groups")));
    }
    let mut best: Option<(Orientation, GroupFits, f64, f64)> = None;
    let mut side_p = [None, None];
    let mut last_err = None;
    for (slot, orientation) in Orientation::ALL.into_iter().enumerate() {
        let run = || -> Result<(GroupFits, f64, f64)> {
            let c = refit_p(control, estimates, orientation)?;
            let t = refit_p(test, estimates, orientation)?;
            let pooled = if method.needs_pooled() {
                let all: Vec<AlleleCounts> = control.iter().chain(test).copied().collect();
                Some(refit_p(&all, estimates, orientation)?)
            } else {
                None
            };
            let fits = GroupFits { control: c, test: t, pooled };
            let (stat, p) = method.test(&fits)?;
            Ok((fits, stat, p))
        };
        match run() {
            Ok((fits, stat, p)) => {
                side_p[slot] = Some(p);
                if best.as_ref().map_or(true, |b| p < b.3) {
                    best = Some((orientation, fits, stat, p));
                }
            }
            Err(e) => {
                debug!("SNV {snv} {orientation}: {e}");
                last_err = Some(e);
            }
        }
    }
    let Some((orientation, fits, statistic, final_pval)) = best else {
        return Err(last_err.expect("at least one orientation ran"));
    };
    Ok(DiffTestRecord {
        snv: snv.to_string(),
        method: method.kind(),
        orientation,
        p_control: fits.control.p,
        p_test: fits.test.p,
        se_control: se(fits.control.info),
        se_test: se(fits.test.info),
        statistic,
        pval_side1: side_p[0],
        pval_side2: side_p[1],
        final_pval,
        n_control: fits.control.n_used,
        n_test: fits.test.n_used,
        boundary: fits.control.boundary || fits.test.boundary,
    })
}
