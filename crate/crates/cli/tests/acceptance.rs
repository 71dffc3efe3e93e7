//! Acceptance criteria. Each test writes one `acceptance N: PASS|FAIL` line
//! to stderr (bypassing output capture) and then asserts.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use asmix_core::difftest::{difftest_snv, DiffTestRegistry};
use asmix_core::dist::{
    betanb_cdf, betanb_pmf_table, mcnb_pmf_table, mcnb_second_moment, moments, nb_cdf, nb_pmf_table, BetaNbBranch,
    BetaNbParams, DistributionSpec, McnbParams, ModelKind, NbParams, Params, Truncation,
};
use asmix_core::fit::{fit_global, fit_window, window_loglik, window_loglik_gradient, EstimateTable, FitSettings, ParameterVector};
use asmix_core::model::{model_for, AlleleCounts, BadValue, CountTable, Observation, WindowSlice};
use asmix_core::scoring::{combine_pvalues, conditional_mixture, ln_mid_pvalue, AlleleSide};
use asmix_core::sim::{sample_truncated, MixtureSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::ops::Pow;
use rug::Float;

const PREC: u32 = 192;

fn report(n: u32, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {n:>2}: {verdict}  {detail}");
}

fn f(v: f64) -> Float {
    Float::with_val(PREC, v)
}

fn ln_gamma(v: &Float) -> Float {
    v.clone().ln_gamma()
}

/// NB PMF `Γ(x+r)/(Γ(r) x!) (1-p)^r p^x` in extended precision.
fn nb_pmf_mp(x: u64, r: f64, p: f64) -> Float {
    let (r, p, xf) = (f(r), f(p), f(x as f64));
    let lg = ln_gamma(&(xf.clone() + &r)) - ln_gamma(&r) - ln_gamma(&(xf.clone() + 1u32));
    let lp = r * (Float::with_val(PREC, 1u32) - &p).ln() + xf * p.ln();
    (lg + lp).exp()
}

/// BetaNB PMF `Γ(r+x)/(x! Γ(r)) B(r+α, x+β)/B(α, β)`, `α = (1-µ)κ`, `β = µκ`.
fn betanb_pmf_mp(x: u64, r: f64, mu: f64, kappa: f64) -> Float {
    let (r, xf) = (f(r), f(x as f64));
    let a = f((1.0 - mu) * kappa);
    let b = f(mu * kappa);
    let ln_b = |u: &Float, v: &Float| ln_gamma(u) + ln_gamma(v) - ln_gamma(&(u.clone() + v));
    let lg = ln_gamma(&(xf.clone() + &r)) - ln_gamma(&r) - ln_gamma(&(xf.clone() + 1u32));
    (lg + ln_b(&(r.clone() + &a), &(xf + &b)) - ln_b(&a, &b)).exp()
}

fn ks_uniform(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn acceptance_01_mcnb_moments() {
    let start = std::time::Instant::now();
    let (mut err_mean, mut err_m2) = (0.0f64, 0.0f64);
    for r in linspace(1.0, 50.0, 200) {
        for p in linspace(0.1, 0.9, 200) {
            let params = McnbParams { r, p };
            let table = mcnb_pmf_table(999, &params).unwrap();
            let (mut m1, mut m2) = (0.0, 0.0);
            for (x, v) in table.iter().enumerate() {
                m1 += x as f64 * v;
                m2 += (x * x) as f64 * v;
            }
            let spec = DistributionSpec::new(Params::Mcnb(params), Truncation { l: 0 }).unwrap();
            let (mean, _) = moments(&spec).unwrap();
            err_mean = err_mean.max((mean - m1).abs());
            err_m2 = err_m2.max((mcnb_second_moment(&params).unwrap() - m2).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = err_mean < 1e-9 && err_m2 < 1e-9 && secs < 300.0;
    report(1, pass, format!("max |dmean| = {err_mean:.3e}, max |dE[x^2]| = {err_m2:.3e} (tol 1e-9), {secs:.1}s"));
    assert!(pass);
}

#[test]
fn acceptance_02_mcnb_recurrence() {
    // compound oracle: sum_k NB(x | k, p) ZTBin(k | r, 1 - p)
    let mut worst = 0.0f64;
    for r in 1..=10u32 {
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let table = mcnb_pmf_table(200, &McnbParams { r: r as f64, p }).unwrap();
            let q = f(1.0 - p);
            let norm = Float::with_val(PREC, 1u32) - f(p).pow(r);
            let zt: Vec<Float> = (1..=r)
                .map(|k| {
                    let c = Float::with_val(PREC, rug::Integer::from(r).binomial(k));
                    c * q.clone().pow(k) * f(p).pow(r - k) / &norm
                })
                .collect();
            for (x, v) in table.iter().enumerate() {
                let mut want = Float::with_val(PREC, 0u32);
                for (k, w) in (1..=r).zip(&zt) {
                    want += nb_pmf_mp(x as u64, k as f64, p) * w;
                }
                worst = worst.max((v - want.to_f64()).abs());
            }
        }
    }
    let pass = worst < 1e-10;
    report(2, pass, format!("max |recurrence - compound sum| = {worst:.3e} over r=1..10, 5 p, x<=200 (tol 1e-10)"));
    assert!(pass);
}

#[test]
fn acceptance_03_cdf_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = Vec::new();
    for i in 0..500 {
        let p: f64 = rng.gen_range(0.05..0.95);
        let x: u64 = rng.gen_range(0..300);
        // every other point sits next to the branch boundary r = x (1-p)/p
        let r = if i % 2 == 0 && x > 0 {
            (x as f64 * (1.0 - p) / p * (1.0 + rng.gen_range(-1e-3..1e-3))).max(0.05)
        } else {
            rng.gen_range(0.2..120.0)
        };
        points.push((x, r, p));
    }
    let below = |x: u64, r: f64, p: f64| r <= x as f64 * (1.0 - p) / p;

    let mut nb_err = 0.0f64;
    let mut nb_sides = [0usize; 2];
    for &(x, r, p) in &points {
        let mut acc = Float::with_val(PREC, 0u32);
        for k in 0..=x {
            acc += nb_pmf_mp(k, r, p);
        }
        nb_err = nb_err.max((nb_cdf(x, &NbParams { r, p }).unwrap() - acc.to_f64()).abs());
        nb_sides[below(x, r, p) as usize] += 1;
    }

    let mut bnb_err = 0.0f64;
    let mut bnb_sides = [0usize; 2];
    for (i, &(x, r, mu)) in points.iter().enumerate() {
        let kappa = [3.0, 20.0, 150.0, 1000.0][i % 4] / (1.0 - mu).min(mu);
        let params = BetaNbParams { r, mu, kappa };
        let mut acc = Float::with_val(PREC, 0u32);
        for k in 0..=x {
            acc += betanb_pmf_mp(k, r, mu, kappa);
        }
        bnb_err = bnb_err.max((betanb_cdf(x, &params).unwrap() - acc.to_f64()).abs());
        let side = BetaNbBranch::select(x, r, mu) == BetaNbBranch::Survival;
        bnb_sides[side as usize] += 1;
    }
    let pass = nb_err < 1e-8 && bnb_err < 1e-8 && nb_sides.iter().all(|&c| c > 100) && bnb_sides.iter().all(|&c| c > 100);
    report(
        3,
        pass,
        format!(
            "NB max err {nb_err:.3e} (branches {}/{}), BetaNB max err {bnb_err:.3e} (branches {}/{}), 500 points (tol 1e-8)",
            nb_sides[1], nb_sides[0], bnb_sides[1], bnb_sides[0]
        ),
    );
    assert!(pass);
}

#[test]
fn acceptance_04_betanb_symmetry() {
    let mut worst = 0.0f64;
    let mut n = 0;
    let xs = [0u64, 1, 2, 4, 7, 11, 19, 30, 55, 90];
    let rs = [1u64, 2, 3, 6, 12, 25, 40];
    for kappa in [5.0, 50.0, 500.0] {
        for (i, &x) in xs.iter().enumerate() {
            for (j, &r) in rs.iter().enumerate() {
                let mu = [0.2, 0.3, 0.45, 0.6, 0.75][(i * 3 + j) % 5];
                let g = betanb_cdf(x, &BetaNbParams { r: r as f64, mu, kappa }).unwrap();
                let h = betanb_cdf(r - 1, &BetaNbParams { r: (x + 1) as f64, mu: 1.0 - mu, kappa }).unwrap();
                worst = worst.max((g + h - 1.0).abs());
                n += 1;
            }
        }
    }
    let pass = worst < 1e-8 && n >= 200;
    report(4, pass, format!("max |G(x|r,mu,k) + G(r-1|x+1,1-mu,k) - 1| = {worst:.3e} over {n} points (tol 1e-8)"));
    assert!(pass);
}

#[test]
fn acceptance_05_betanb_to_nb_limit() {
    let mut worst = 0.0f64;
    for r in [5.0, 50.0] {
        for p in [0.3, 0.5, 0.75] {
            let a = betanb_pmf_table(200, &BetaNbParams { r, mu: p, kappa: 1e6 }).unwrap();
            let b = nb_pmf_table(200, &NbParams { r, p }).unwrap();
            worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
        }
    }
    let pass = worst < 1e-4;
    report(5, pass, format!("sup |BetaNB(kappa=1e6) - NB| = {worst:.3e} on x<=200, r in {{5,50}}, p in {{0.3,0.5,0.75}} (tol 1e-4)"));
    assert!(pass);
}

/// Observations of the variable count for fixed counts in `rows`, drawn from
/// the model at `theta`.
fn simulate_slice(
    kind: ModelKind,
    theta: &ParameterVector,
    rows: std::ops::RangeInclusive<u64>,
    per_row: usize,
    l: u64,
    rng: &mut ChaCha8Rng,
) -> WindowSlice {
    let mut obs = Vec::new();
    let centre = (rows.start() + rows.end()) / 2;
    for y in rows {
        let mix = theta.mixture(model_for(kind), y, Truncation { l }).unwrap();
        let s = MixtureSampler::new(&mix).unwrap();
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for _ in 0..per_row {
            *counts.entry(s.sample(rng)).or_default() += 1;
        }
        let mut row: Vec<_> = counts.into_iter().collect();
        row.sort();
        obs.extend(row.into_iter().map(|(variable, mult)| Observation { fixed: y, variable, mult }));
    }
    WindowSlice::from_observations(centre, obs)
}

#[test]
fn acceptance_06_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for kind in [ModelKind::Nb, ModelKind::BetaNb, ModelKind::Mcnb] {
        let settings = FitSettings::new(kind);
        let truth = ParameterVector {
            b: 1.0,
            a: 1.5,
            mu_or_p: 2.0 / 3.0,
            kappa: (kind == ModelKind::BetaNb).then_some(60.0),
            w: 0.6,
        };
        let slice = simulate_slice(kind, &truth, 8..=30, 60, settings.l, &mut rng);
        for _ in 0..50 {
            let theta = ParameterVector {
                b: rng.gen_range(0.5..2.0),
                a: rng.gen_range(0.2..6.0),
                mu_or_p: truth.mu_or_p,
                kappa: truth.kappa.map(|_| rng.gen_range(8.0..800.0)),
                w: rng.gen_range(0.2..0.9),
            };
            let (_, g) = window_loglik_gradient(&theta, &slice, &settings);
            let coords: Vec<usize> = if theta.kappa.is_some() { vec![0, 1, 2, 3] } else { vec![0, 1, 3] };
            for i in coords {
                let get = |t: &ParameterVector| [t.b, t.a, t.kappa.unwrap_or(0.0), t.w][i];
                let set = |t: &mut ParameterVector, v: f64| match i {
                    0 => t.b = v,
                    1 => t.a = v,
                    2 => t.kappa = Some(v),
                    _ => t.w = v,
                };
                let h = 1e-5 * get(&theta).abs().max(1.0);
                let (mut up, mut dn) = (theta, theta);
                set(&mut up, get(&theta) + h);
                set(&mut dn, get(&theta) - h);
                let fd = (window_loglik(&up, &slice, &settings) - window_loglik(&dn, &slice, &settings)) / (2.0 * h);
                worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0));
                checked += 1;
            }
        }
    }
    let pass = worst < 1e-5;
    report(6, pass, format!("max relative gradient error {worst:.3e} over {checked} partials, 50 points x 3 models (tol 1e-5)"));
    assert!(pass);
}

#[test]
fn acceptance_07_parameter_recovery() {
    let start = std::time::Instant::now();
    let settings = FitSettings::new(ModelKind::Nb);
    let truth = ParameterVector { b: 1.0, a: 0.5, mu_or_p: 0.5, kappa: None, w: 1.0 };
    let (mut worst_b, mut worst_a) = (0.0f64, 0.0f64);
    let mut all_converged = true;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let slice = simulate_slice(ModelKind::Nb, &truth, 5..=54, 1000, 5, &mut rng);
        assert_eq!(slice.n_obs, 50_000);
        let est = fit_window(&slice, &settings, &ParameterVector::initial(&settings, BadValue::ONE)).unwrap();
        all_converged &= est.converged;
        worst_b = worst_b.max((est.theta.b - 1.0).abs());
        worst_a = worst_a.max((est.theta.a - 0.5).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = all_converged && worst_b <= 0.05 && worst_a <= 0.5 && secs < 600.0;
    report(7, pass, format!("20 seeds x 5e4 obs: max |b-1| = {worst_b:.4}, max |a-0.5| = {worst_a:.4} (tol 0.05, 0.5), {secs:.1}s"));
    assert!(pass);
}

/// `(ref, alt)` pairs: alt from a coverage distribution, ref from the model
/// conditioned on alt.
fn simulate_pairs(theta: &ParameterVector, n: usize, l: u64, rng: &mut ChaCha8Rng) -> Vec<(u64, u64)> {
    let coverage = DistributionSpec::new(Params::Nb(NbParams { r: 3.0, p: 0.9 }), Truncation { l }).unwrap();
    let ys = sample_truncated(&coverage, n, rng).unwrap();
    let mut samplers: HashMap<u64, MixtureSampler> = HashMap::new();
    ys.into_iter()
        .map(|y| {
            let s = samplers.entry(y).or_insert_with(|| {
                MixtureSampler::new(&theta.mixture(model_for(ModelKind::Nb), y, Truncation { l }).unwrap()).unwrap()
            });
            (s.sample(rng), y)
        })
        .collect()
}

fn fit_pairs(pairs: &[(u64, u64)], bad: BadValue) -> EstimateTable {
    let mut t = CountTable::new();
    for &(x, y) in pairs {
        t.add(x, y, 1);
    }
    fit_global(&[(bad, t)].into_iter().collect(), &FitSettings::new(ModelKind::Nb)).unwrap()
}

fn null_ks(theta: ParameterVector, bad: BadValue, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = simulate_pairs(&theta, 100_000, 5, &mut rng);
    let est = fit_pairs(&pairs, bad);
    let mut cache: HashMap<(u64, u64), f64> = HashMap::new();
    let mut p: Vec<f64> = pairs
        .iter()
        .map(|&(x, y)| {
            *cache.entry((x, y)).or_insert_with(|| {
                let mix = conditional_mixture(AlleleSide::Ref, x, y, &est, bad).unwrap();
                ln_mid_pvalue(x, &mix).unwrap().exp()
            })
        })
        .collect();
    ks_uniform(&mut p)
}

#[test]
fn acceptance_08_null_calibration() {
    let balanced = ParameterVector { b: 1.0, a: 0.5, mu_or_p: 0.5, kappa: None, w: 1.0 };
    let ks1 = null_ks(balanced, BadValue::ONE, 8);
    let bad2 = BadValue::new(2.0).unwrap();
    let ks2 = null_ks(ParameterVector { mu_or_p: bad2.p(), w: 0.5, ..balanced }, bad2, 9);
    let pass = ks1 < 0.02 && ks2 < 0.03;
    report(8, pass, format!("1e5 null obs, fit then scored: mid-p KS {ks1:.4} at BAD 1 (tol 0.02), {ks2:.4} at BAD 2 (tol 0.03)"));
    assert!(pass);
}

#[test]
fn acceptance_09_combination() {
    let exact = (1..=50).all(|n| combine_pvalues(&vec![0.5f64.ln(); n]).unwrap().exp() == 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reps = 200_000;
    let mut rates = Vec::new();
    for n in [2usize, 5, 10] {
        let hits = (0..reps)
            .filter(|_| {
                let ln_p: Vec<f64> = (0..n).map(|_| (1.0 - rng.gen::<f64>()).ln()).collect();
                combine_pvalues(&ln_p).unwrap() < 0.05f64.ln()
            })
            .count();
        rates.push(hits as f64 / reps as f64);
    }
    let pass = exact && rates.iter().all(|r| (r - 0.05).abs() <= 0.005);
    report(
        9,
        pass,
        format!(
            "all-0.5 -> 0.5 exactly: {exact}; type-I at 0.05 for n=2,5,10: {:.4}, {:.4}, {:.4} (tol +-10%)",
            rates[0], rates[1], rates[2]
        ),
    );
    assert!(pass);
}

fn as_counts(pairs: &[(u64, u64)]) -> Vec<AlleleCounts> {
    pairs.iter().map(|&(x, y)| AlleleCounts::new(x, y, BadValue::ONE)).collect()
}

#[test]
fn acceptance_10_difftest() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let null = ParameterVector { b: 1.0, a: 0.5, mu_or_p: 0.5, kappa: None, w: 1.0 };
    let est = fit_pairs(&simulate_pairs(&null, 100_000, 5, &mut rng), BadValue::ONE);
    let registry = DiffTestRegistry::standard();
    let wald = registry.get("wald").unwrap();

    let mut pvals = Vec::new();
    let mut side1 = Vec::new();
    let mut failed = 0;
    for i in 0..2000 {
        let c = simulate_pairs(&null, 20, 5, &mut rng);
        let t = simulate_pairs(&null, 20, 5, &mut rng);
        match difftest_snv(&format!("s{i}"), &as_counts(&c), &as_counts(&t), &est, wald) {
            Ok(rec) => {
                pvals.push(rec.final_pval);
                side1.extend(rec.pval_side1);
            }
            Err(_) => failed += 1,
        }
    }
    let ks = ks_uniform(&mut pvals);
    let ks_side1 = ks_uniform(&mut side1);

    let shifted = ParameterVector { mu_or_p: 0.75, ..null };
    let c = simulate_pairs(&null, 1000, 5, &mut rng);
    let t = simulate_pairs(&shifted, 1000, 5, &mut rng);
    let power = difftest_snv("shift", &as_counts(&c), &as_counts(&t), &est, wald).unwrap().final_pval;

    let pass = ks < 0.03 && power < 1e-4 && failed == 0;
    report(
        10,
        pass,
        format!(
            "identical groups: KS {ks:.4} over {} SNVs ({failed} failed, tol 0.03; ref|alt alone {ks_side1:.4}); \
             p 0.5 vs 0.75 at n=1000: {power:.3e} (tol 1e-4)",
            pvals.len()
        ),
    );
    assert!(pass);
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_asmix")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn golden_run(dir: &Path) -> Vec<Vec<u8>> {
    for sub in ["counts"] {
        fs::create_dir_all(dir.join(sub)).unwrap();
        for e in fs::read_dir(fixtures().join(sub)).unwrap() {
            let e = e.unwrap();
            fs::copy(e.path(), dir.join(sub).join(e.file_name())).unwrap();
        }
    }
    fs::copy(fixtures().join("bad.bed"), dir.join("bad.bed")).unwrap();
    run(dir, &["create", "P", "counts", "--bad", "bad.bed"]);
    run(dir, &["fit", "P", "NB"]);
    run(dir, &["test", "P"]);
    run(dir, &["combine", "P"]);
    run(dir, &["export", "all", "P", "out"]);
    read_exports(&dir.join("out"))
}

fn read_exports(dir: &Path) -> Vec<Vec<u8>> {
    ["params.tsv", "raw_scores.tsv", "combined_scores.tsv"].iter().map(|t| fs::read(dir.join(t)).unwrap()).collect()
}

#[test]
fn acceptance_11_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = golden_run(a.path());
    let second = golden_run(b.path());
    let golden = read_exports(&fixtures().join("golden"));
    fs::remove_dir_all(a.path().join("out")).unwrap();
    run(a.path(), &["reproduce", "P.mixproj/reproduce.json"]);
    let replayed = read_exports(&a.path().join("out"));
    let pass = first == second && first == golden && replayed == first;
    report(
        11,
        pass,
        format!(
            "two runs identical: {}; match golden: {}; reproduce identical: {}",
            first == second,
            first == golden,
            replayed == first
        ),
    );
    assert!(pass);
}
