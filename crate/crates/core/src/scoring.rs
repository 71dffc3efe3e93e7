//! Per-observation p-values and effect sizes, and their combination across
//! the samples of a group.
//!
//! P-values are carried as natural logarithms so that tails far below the
//! smallest double survive scoring, combination and export.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::EstimateTable;
use crate::model::{mixture_ln_tail, mixture_logpmf, mixture_truncated_mean, BadValue, MixtureParams, Orientation};
use crate::real::ln_one_minus_exp;
use crate::stats::ln_student_t_sf;

/// Allele whose count is tested for excess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlleleSide {
    Ref,
    Alt,
}

impl AlleleSide {
    pub fn name(self) -> &'static str {
        match self {
            AlleleSide::Ref => "ref",
            AlleleSide::Alt => "alt",
        }
    }

    /// The orientation in which this allele is the variable count.
    pub fn orientation(self) -> Orientation {
        match self {
            AlleleSide::Ref => Orientation::RefGivenAlt,
            AlleleSide::Alt => Orientation::AltGivenRef,
        }
    }
}

impl fmt::Display for AlleleSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlleleSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref" => Ok(AlleleSide::Ref),
            "alt" => Ok(AlleleSide::Alt),
            _ => Err(Error::InvalidArgument(format!("unknown allele side '{s}'"))),
        }
    }
}

/// Both one-sided scores of one `(ref, alt, BAD)` observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideScores {
    pub ln_pval_ref: f64,
    pub ln_pval_alt: f64,
    pub es_ref: f64,
    pub es_alt: f64,
}

impl SideScores {
    pub fn ln_pval(&self, side: AlleleSide) -> f64 {
        match side {
            AlleleSide::Ref => self.ln_pval_ref,
            AlleleSide::Alt => self.ln_pval_alt,
        }
    }

    pub fn es(&self, side: AlleleSide) -> f64 {
        match side {
            AlleleSide::Ref => self.es_ref,
            AlleleSide::Alt => self.es_alt,
        }
    }
}

/// Scores of one SNV in one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub snv: String,
    pub sample: String,
    pub ref_count: u64,
    pub alt_count: u64,
    pub bad: BadValue,
    #[serde(flatten)]
    pub scores: SideScores,
}

/// Combined scores of one SNV across a group of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub snv: String,
    pub group: String,
    pub n_obs: usize,
    pub ln_comb_pval_ref: f64,
    pub ln_comb_pval_alt: f64,
    pub comb_es_ref: f64,
    pub comb_es_alt: f64,
    pub ln_final_pval: f64,
    pub final_es: f64,
    pub final_side: AlleleSide,
    /// Set when every p-value of a side was 1, so its effect size is reported as 0.
    pub degenerate_es: bool,
}

/// The conditional mixture of the `side` allele count given the other count.
pub fn conditional_mixture(
    side: AlleleSide,
    ref_count: u64,
    alt_count: u64,
    estimates: &EstimateTable,
    bad: BadValue,
) -> Result<MixtureParams> {
    let orientation = side.orientation();
    let (fixed, _) = orientation.split(ref_count, alt_count);
    let est = estimates.get(orientation, bad, fixed)?;
    let s = &estimates.settings;
    est.theta.mixture(s.model(), fixed, s.truncation())
}

/// `log2(mean) - log2(observed)`.
pub fn effect_size(observed: f64, conditional_mean: f64) -> Result<f64> {
    if !(observed > 0.0) || !(conditional_mean > 0.0) {
        return Err(Error::domain(format!(
            "effect size needs positive counts (observed={observed}, mean={conditional_mean})"
        )));
    }
    Ok((conditional_mean / observed).log2())
}

/// Right-tail p-values and effect sizes of `x` reference and `y` alternative
/// reads under the fitted conditional mixtures.
pub fn score_observation(x: u64, y: u64, estimates: &EstimateTable, bad: BadValue) -> Result<SideScores> {
    let l = estimates.settings.l;
    if x < l || y < l {
        return Err(Error::domain(format!("counts ({x}, {y}) below the truncation threshold {l}")));
    }
    let side = |side: AlleleSide, observed: u64| -> Result<(f64, f64)> {
        let mix = conditional_mixture(side, x, y, estimates, bad)?;
        let ln_p = mixture_ln_tail(observed, &mix)?.min(0.0);
        let es = effect_size(observed as f64, mixture_truncated_mean(&mix)?)?;
        Ok((ln_p, es))
    };
    let (ln_pval_ref, es_ref) = side(AlleleSide::Ref, x)?;
    let (ln_pval_alt, es_alt) = side(AlleleSide::Alt, y)?;
    Ok(SideScores { ln_pval_ref, ln_pval_alt, es_ref, es_alt })
}

/// `ln(P(Z > x) + P(Z = x) / 2)`, the mid-p variant of the right tail.
pub fn ln_mid_pvalue(x: u64, mix: &MixtureParams) -> Result<f64> {
    let tail = mixture_ln_tail(x, mix)?;
    let point = mixture_logpmf(x, mix)? - std::f64::consts::LN_2;
    Ok(tail + ln_one_minus_exp(point - tail))
}

/// Mudholkar-George logit combination of `ln p` values; returns `ln p`.
pub fn combine_pvalues(ln_pvals: &[f64]) -> Result<f64> {
    if ln_pvals.is_empty() {
        return Err(Error::domain("cannot combine an empty list of p-values"));
    }
    let mut logit_sum = 0.0;
    for &lp in ln_pvals {
        if !(lp < 0.0) || lp == f64::NEG_INFINITY {
            return Err(Error::domain(format!("p-value {} outside (0,1)", lp.exp())));
        }
        logit_sum += lp - ln_one_minus_exp(lp);
    }
    let n = ln_pvals.len() as f64;
    let scale = (3.0 * (5.0 * n + 4.0) / (PI * PI * n * (5.0 * n + 2.0))).sqrt();
    ln_student_t_sf(-logit_sum * scale, 5.0 * n + 4.0)
}

/// Average of `es` weighted by `-ln p`.
pub fn combine_effect_sizes(es: &[f64], ln_pvals: &[f64]) -> Result<f64> {
    if es.is_empty() || es.len() != ln_pvals.len() {
        return Err(Error::domain(format!(
            "effect sizes and p-values must be non-empty and of equal length ({} vs {})",
            es.len(),
            ln_pvals.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&e, &lp) in es.iter().zip(ln_pvals) {
        if lp > 0.0 || lp.is_nan() {
            return Err(Error::domain(format!("p-value {} outside (0,1]", lp.exp())));
        }
        num += -lp * e;
        den += -lp;
    }
    if den == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(num / den)
}

/// Largest `ln p` passed to the logit combination. A p-value of exactly 1
/// (an observation at the truncation threshold) has an infinite logit.
const LN_P_MAX: f64 = -f64::EPSILON / 2.0;

/// Combines the raw scores of one SNV in one group and picks the more
/// significant side, preferring `ref` on ties.
pub fn score_group(snv: &str, group: &str, raws: &[&RawScore]) -> Result<ScoreRecord> {
    if raws.is_empty() {
        return Err(Error::domain(format!("SNV {snv} has no observations in group {group}")));
    }
    let mut degenerate_es = false;
    let mut side = |side: AlleleSide| -> Result<(f64, f64)> {
        let ln_p: Vec<f64> = raws.iter().map(|r| r.scores.ln_pval(side)).collect();
        let es: Vec<f64> = raws.iter().map(|r| r.scores.es(side)).collect();
        let clamped: Vec<f64> = ln_p.iter().map(|v| v.min(LN_P_MAX)).collect();
        let comb_p = combine_pvalues(&clamped)?;
        let comb_es = match combine_effect_sizes(&es, &ln_p) {
            Err(Error::DegenerateWeights) => {
                degenerate_es = true;
                0.0
            }
            other => other?,
        };
        Ok((comb_p, comb_es))
    };
    let (ln_comb_pval_ref, comb_es_ref) = side(AlleleSide::Ref)?;
    let (ln_comb_pval_alt, comb_es_alt) = side(AlleleSide::Alt)?;
    let (final_side, ln_final_pval, final_es) = if ln_comb_pval_ref <= ln_comb_pval_alt {
        (AlleleSide::Ref, ln_comb_pval_ref, comb_es_ref)
    } else {
        (AlleleSide::Alt, ln_comb_pval_alt, comb_es_alt)
    };
    Ok(ScoreRecord {
        snv: snv.to_string(),
        group: group.to_string(),
        n_obs: raws.len(),
        ln_comb_pval_ref,
        ln_comb_pval_alt,
        comb_es_ref,
        comb_es_alt,
        ln_final_pval,
        final_es,
        final_side,
        degenerate_es,
    })
}

/// Benjamini-Hochberg adjusted `ln q` for a list of `ln p`, in input order.
pub fn benjamini_hochberg(ln_pvals: &[f64]) -> Vec<f64> {
    let n = ln_pvals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| ln_pvals[i].total_cmp(&ln_pvals[j]).then(i.cmp(&j)));
    let ln_n = (n as f64).ln();
    let mut out = vec![0.0; n];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let q = ln_pvals[i] + ln_n - ((rank + 1) as f64).ln();
        running = running.min(q);
        out[i] = running;
    }
    out
}

pub type ScoreKey = (u64, u64, BadValue);

/// Memo of per-tuple scores shared between threads.
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: RwLock<HashMap<ScoreKey, SideScores>>,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_score(&self, key: ScoreKey, estimates: &EstimateTable) -> Result<SideScores> {
        if let Some(v) = self.map.read().expect("score cache poisoned").get(&key) {
            return Ok(*v);
        }
        let v = score_observation(key.0, key.1, estimates, key.2)?;
        Ok(*self.map.write().expect("score cache poisoned").entry(key).or_insert(v))
    }
}

/// Scores each distinct tuple once, in parallel; results follow `keys`.
pub fn score_unique(keys: &[ScoreKey], estimates: &EstimateTable, cache: &ScoreCache) -> Vec<Result<SideScores>> {
    keys.par_iter().map(|&k| cache.get_or_score(k, estimates)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{DistributionSpec, NbParams, Params, Truncation};
    use crate::fit::{EstimateKey, FitSettings, ParameterVector, WindowEstimate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn table(theta: ParameterVector, bad: BadValue, max_fixed: u64) -> EstimateTable {
        let mut t = EstimateTable::new(FitSettings::default());
        for orientation in Orientation::ALL {
            for fixed in 5..=max_fixed {
                t.insert(EstimateKey { orientation, bad, fixed_value: fixed }, WindowEstimate::given(fixed, theta));
            }
        }
        t
    }

    fn nb_theta() -> ParameterVector {
        ParameterVector { b: 1.0, a: 0.5, mu_or_p: 0.5, kappa: None, w: 1.0 }
    }

    #[test]
    fn minimum_support_has_unit_pvalue() {
        let t = table(nb_theta(), BadValue::ONE, 60);
        let s = score_observation(5, 20, &t, BadValue::ONE).unwrap();
        assert_eq!(s.ln_pval_ref, 0.0);
    }

    #[test]
    fn symmetric_fit_gives_equal_sides() {
        let t = table(ParameterVector { a: 0.0, ..nb_theta() }, BadValue::ONE, 60);
        let s = score_observation(17, 17, &t, BadValue::ONE).unwrap();
        assert_eq!(s.ln_pval_ref, s.ln_pval_alt);
        assert_eq!(s.es_ref, s.es_alt);
    }

    #[test]
    fn pvalue_matches_direct_tail() {
        let t = table(nb_theta(), BadValue::ONE, 60);
        let s = score_observation(30, 15, &t, BadValue::ONE).unwrap();
        let spec = DistributionSpec::new(Params::Nb(NbParams { r: 15.5, p: 0.5 }), Truncation { l: 5 }).unwrap();
        let want = spec.right_tail_logp(30).unwrap();
        assert!(((s.ln_pval_ref - want) / want).abs() < 1e-6);
        let spec_alt = DistributionSpec::new(Params::Nb(NbParams { r: 30.5, p: 0.5 }), Truncation { l: 5 }).unwrap();
        assert!((s.ln_pval_alt - spec_alt.right_tail_logp(15).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn missing_window() {
        let t = table(nb_theta(), BadValue::ONE, 20);
        assert!(matches!(score_observation(30, 25, &t, BadValue::ONE), Err(Error::MissingEstimate { .. })));
        assert!(matches!(score_observation(10, 10, &t, BadValue::new(2.0).unwrap()), Err(Error::MissingEstimate { .. })));
    }

    #[test]
    fn effect_size_examples() {
        assert_eq!(effect_size(12.0, 12.0).unwrap(), 0.0);
        assert_eq!(effect_size(10.0, 20.0).unwrap(), 1.0);
        assert!(effect_size(0.0, 3.0).is_err());
        assert!(effect_size(3.0, -1.0).is_err());
        // 0.5 NB(10, 2/3) + 0.5 NB(10, 1/3): means 20 and 5
        let model = crate::model::model_for(crate::dist::ModelKind::Nb);
        let mix = MixtureParams::build(model, 10.0, 2.0 / 3.0, None, 0.5, Truncation { l: 0 }).unwrap();
        let mean = mixture_truncated_mean(&mix).unwrap();
        assert!((mean - 12.5).abs() < 1e-12);
        assert!((effect_size(25.0, mean).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_combines_to_half() {
        for n in 1..6 {
            let v = combine_pvalues(&vec![0.5f64.ln(); n]).unwrap();
            assert_eq!(v.exp(), 0.5);
        }
        assert!(combine_pvalues(&[]).is_err());
        assert!(combine_pvalues(&[0.0]).is_err());
        assert!(combine_pvalues(&[0.1f64.ln(), f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn single_pvalue_is_nearly_preserved() {
        // with one study -logit(p) is exactly logistic under the null, so the
        // t approximation should return roughly p itself
        for p in [0.1f64, 0.01, 0.3, 0.8] {
            let v = combine_pvalues(&[p.ln()]).unwrap().exp();
            assert!((v - p).abs() < 0.02, "{p} -> {v}");
        }
    }

    #[test]
    fn combination_matches_statrs_t() {
        let ps = [0.03f64, 0.2, 0.5, 0.7];
        let n = ps.len() as f64;
        let logit: f64 = ps.iter().map(|p| (p / (1.0 - p)).ln()).sum();
        let t = -logit * (3.0 * (5.0 * n + 4.0) / (PI * PI * n * (5.0 * n + 2.0))).sqrt();
        let want = StudentsT::new(0.0, 1.0, 5.0 * n + 4.0).unwrap().sf(t);
        let ln_ps: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
        assert!((combine_pvalues(&ln_ps).unwrap().exp() - want).abs() < 1e-12);
    }

    #[test]
    fn combination_is_monotone_and_symmetric() {
        let base = [0.05f64.ln(), 0.2f64.ln(), 0.6f64.ln()];
        let v = combine_pvalues(&base).unwrap();
        let perm = combine_pvalues(&[base[2], base[0], base[1]]).unwrap();
        assert!((v - perm).abs() < 1e-14);
        let lower = combine_pvalues(&[0.01f64.ln(), base[1], base[2]]).unwrap();
        assert!(lower <= v);
        let three = combine_pvalues(&[0.05f64.ln(); 3]).unwrap();
        assert!(three < 0.05f64.ln());
    }

    #[test]
    fn combination_of_tiny_pvalues_stays_finite() {
        let v = combine_pvalues(&[-2000.0, -1500.0]).unwrap();
        assert!(v.is_finite() && v < -10.0);
    }

    #[test]
    fn null_type_one_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n_sim = 100_000;
        let mut rejected = 0;
        for _ in 0..n_sim {
            let ps: Vec<f64> = (0..3).map(|_| rng.gen::<f64>().max(1e-300).ln()).collect();
            if combine_pvalues(&ps).unwrap() < 0.05f64.ln() {
                rejected += 1;
            }
        }
        let rate = rejected as f64 / n_sim as f64;
        assert!((rate / 0.05 - 1.0).abs() < 0.1, "{rate}");
    }

    #[test]
    fn weighted_effect_sizes() {
        assert_eq!(combine_effect_sizes(&[1.7], &[0.2f64.ln()]).unwrap(), 1.7);
        let v = combine_effect_sizes(&[1.0, 3.0], &[-1.0, -3.0]).unwrap();
        assert!((v - 2.5).abs() < 1e-15);
        let v = combine_effect_sizes(&[1.0, 2.0, 6.0], &[0.3f64.ln(); 3]).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
        assert!(matches!(combine_effect_sizes(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::DegenerateWeights)));
        assert!(combine_effect_sizes(&[1.0], &[]).is_err());
    }

    fn raw(x: u64, y: u64, t: &EstimateTable) -> RawScore {
        RawScore {
            snv: "rs1".into(),
            sample: "s".into(),
            ref_count: x,
            alt_count: y,
            bad: BadValue::ONE,
            scores: score_observation(x, y, t, BadValue::ONE).unwrap(),
        }
    }

    #[test]
    fn group_of_one() {
        let t = table(nb_theta(), BadValue::ONE, 80);
        let r = raw(40, 12, &t);
        let g = score_group("rs1", "all", &[&r]).unwrap();
        assert_eq!(g.final_side, AlleleSide::Ref);
        assert!((g.ln_comb_pval_ref.exp() - r.scores.ln_pval_ref.exp()).abs() < 0.02);
        assert!((g.comb_es_ref - r.scores.es_ref).abs() < 1e-14);
        assert_eq!(g.ln_final_pval, g.ln_comb_pval_ref.min(g.ln_comb_pval_alt));
        assert_eq!(g.final_es, g.comb_es_ref);
    }

    #[test]
    fn replicated_observation_is_more_significant() {
        let t = table(nb_theta(), BadValue::ONE, 80);
        let r = raw(12, 35, &t);
        let one = score_group("rs1", "all", &[&r]).unwrap();
        let two = score_group("rs1", "all", &[&r, &r]).unwrap();
        assert_eq!(one.final_side, AlleleSide::Alt);
        assert!(two.ln_final_pval <= one.ln_final_pval);
    }

    #[test]
    fn balanced_tie_goes_to_ref() {
        let t = table(ParameterVector { a: 0.0, ..nb_theta() }, BadValue::ONE, 60);
        let r = raw(20, 20, &t);
        let g = score_group("rs1", "all", &[&r]).unwrap();
        assert_eq!(g.ln_comb_pval_ref, g.ln_comb_pval_alt);
        assert_eq!(g.final_side, AlleleSide::Ref);
    }

    #[test]
    fn unit_pvalues_flag_degenerate_effect_size() {
        let t = table(nb_theta(), BadValue::ONE, 60);
        let r = raw(5, 5, &t);
        let g = score_group("rs1", "all", &[&r, &r]).unwrap();
        assert!(g.degenerate_es);
        assert_eq!(g.comb_es_ref, 0.0);
        assert!(g.ln_final_pval <= 0.0);
    }

    #[test]
    fn bh_against_direct_formula() {
        let p = [0.01f64, 0.04, 0.03, 0.2, 0.5];
        let q: Vec<f64> = benjamini_hochberg(&p.map(f64::ln)).into_iter().map(f64::exp).collect();
        // sorted: 0.01, 0.03, 0.04, 0.2, 0.5 -> 0.05, 0.0667, 0.0667, 0.25, 0.5
        let want = [0.05, 0.2 / 3.0, 0.2 / 3.0, 0.25, 0.5];
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{q:?}");
        }
    }

    #[test]
    fn mid_p_brackets_the_tail() {
        let model = crate::model::model_for(crate::dist::ModelKind::Nb);
        let mix = MixtureParams::build(model, 12.0, 0.5, None, 1.0, Truncation { l: 5 }).unwrap();
        let mid = ln_mid_pvalue(15, &mix).unwrap().exp();
        let ge = mixture_ln_tail(15, &mix).unwrap().exp();
        let gt = mixture_ln_tail(16, &mix).unwrap().exp();
        assert!((mid - 0.5 * (ge + gt)).abs() < 1e-12);
    }

    #[test]
    fn cache_is_consistent() {
        let t = table(nb_theta(), BadValue::ONE, 60);
        let cache = ScoreCache::new();
        let keys: Vec<ScoreKey> = (0..40).map(|i| (10 + i % 7, 12 + i % 5, BadValue::ONE)).collect();
        let got = score_unique(&keys, &t, &cache);
        assert_eq!(cache.len(), 35);
        for (k, v) in keys.iter().zip(got) {
            assert_eq!(v.unwrap(), score_observation(k.0, k.1, &t, k.2).unwrap());
        }
    }
}
