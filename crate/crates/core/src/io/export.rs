//! Tab-separated exports with six significant digits.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::benjamini_hochberg;

use super::ingest::Snv;
use super::store::Project;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportTable {
    All,
    Scores,
    Params,
    Difftest,
}

impl ExportTable {
    pub fn name(self) -> &'static str {
        match self {
            ExportTable::All => "all",
            ExportTable::Scores => "scores",
            ExportTable::Params => "params",
            ExportTable::Difftest => "difftest",
        }
    }
}

impl fmt::Display for ExportTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExportTable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ExportTable::All),
            "scores" => Ok(ExportTable::Scores),
            "params" => Ok(ExportTable::Params),
            "difftest" => Ok(ExportTable::Difftest),
            _ => Err(Error::InvalidArgument(format!("unknown export table '{s}' (all, scores, params, difftest)"))),
        }
    }
}

const SIG: i32 = 6;

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn sci(mantissa: f64, exp: i64) -> String {
    let m = format!("{:.*}", (SIG - 1) as usize, mantissa);
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{}e{sign}{:02}", trim_zeros(&m), exp.abs())
}

/// `%g`-style formatting with six significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // exponent after rounding to SIG digits
    let e: i64 = format!("{:.*e}", (SIG - 1) as usize, x).split('e').nth(1).unwrap().parse().unwrap();
    if e < -4 || e >= SIG as i64 {
        let m = x / 10f64.powi(e as i32);
        let s = sci(m.abs(), e);
        if x < 0.0 {
            format!("-{s}")
        } else {
            s
        }
    } else {
        let s = format!("{:.*}", (SIG as i64 - 1 - e).max(0) as usize, x);
        trim_zeros(&s).to_string()
    }
}

/// Formats `exp(ln_p)`, including values below the double range.
pub fn fmt_ln_p(ln_p: f64) -> String {
    if ln_p > -700.0 || !ln_p.is_finite() {
        return fmt_sig(ln_p.exp());
    }
    let log10 = ln_p / std::f64::consts::LN_10;
    let mut e = log10.floor() as i64;
    let mut m = 10f64.powf(log10 - e as f64);
    if format!("{:.*}", (SIG - 1) as usize, m).starts_with("10") {
        m /= 10.0;
        e += 1;
    }
    sci(m, e)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_else(|| "NA".into())
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join("\t"))?;
    for row in rows {
        writeln!(w, "{}", row.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

fn snv_cols(s: &Snv) -> [String; 4] {
    [s.chrom.clone(), s.pos.to_string(), s.ref_base.to_string(), s.alt_base.to_string()]
}

pub const PARAMS_FILE: &str = "params.tsv";
pub const RAW_SCORES_FILE: &str = "raw_scores.tsv";
pub const COMBINED_FILE: &str = "combined_scores.tsv";
pub const DIFFTEST_FILE: &str = "difftest.tsv";

/// Writes the requested tables into `dir`. `All` writes whichever stores
/// exist; a selected table whose store is missing is an error.
pub fn export(project: &Project, what: ExportTable, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let all = what == ExportTable::All;
    let missing = |verb: &str| Error::InvalidArgument(format!("nothing to export: run `{verb}` first"));
    let snvs: HashMap<&str, &Snv> = project.counts.snvs.iter().map(|s| (s.id.as_str(), s)).collect();
    let loc = |id: &str| -> [String; 4] {
        snvs.get(id).map(|s| snv_cols(s)).unwrap_or_else(|| ["NA".into(), "NA".into(), "NA".into(), "NA".into()])
    };
    let mut written = Vec::new();

    if all || what == ExportTable::Params {
        match &project.estimates {
            Some(est) => {
                let path = dir.join(PARAMS_FILE);
                let header = [
                    "orientation", "bad", "fixed", "lo", "hi", "n_obs", "model", "b", "a", "p", "kappa", "w", "se_b",
                    "se_a", "se_kappa", "se_w", "loglik", "converged", "at_bounds", "status",
                ];
                let model = est.settings.model_kind.name();
                table(
                    &path,
                    &header,
                    est.iter().map(|(k, e)| {
                        let se = e.std_errors.unwrap_or_default();
                        let status = match (&e.error, &e.note) {
                            (Some(err), _) => format!("error: {}", clean(err)),
                            (None, Some(n)) => format!("note: {}", clean(n)),
                            _ => "ok".into(),
                        };
                        vec![
                            k.orientation.to_string(),
                            fmt_sig(k.bad.value()),
                            k.fixed_value.to_string(),
                            e.lo.to_string(),
                            e.hi.to_string(),
                            e.n_obs.to_string(),
                            model.into(),
                            fmt_sig(e.theta.b),
                            fmt_sig(e.theta.a),
                            fmt_sig(e.theta.mu_or_p),
                            opt(e.theta.kappa),
                            fmt_sig(e.theta.w),
                            opt(se.b),
                            opt(se.a),
                            opt(se.kappa),
                            opt(se.w),
                            if e.loglik.is_nan() { "NA".into() } else { fmt_sig(e.loglik) },
                            e.converged.to_string(),
                            if e.at_bounds.is_empty() { ".".into() } else { e.at_bounds.join(",") },
                            status,
                        ]
                    }),
                )?;
                written.push(path);
            }
            None if !all => return Err(missing("fit")),
            None => {}
        }
    }

    if all || what == ExportTable::Scores {
        match &project.scores {
            Some(scores) => {
                let path = dir.join(RAW_SCORES_FILE);
                let header = [
                    "snv", "chr", "pos", "ref", "alt", "sample", "ref_count", "alt_count", "bad", "pval_ref", "pval_alt",
                    "es_ref", "es_alt",
                ];
                table(
                    &path,
                    &header,
                    scores.raw.iter().map(|r| {
                        let mut row = vec![r.snv.clone()];
                        row.extend(loc(&r.snv));
                        row.extend([
                            r.sample.clone(),
                            r.ref_count.to_string(),
                            r.alt_count.to_string(),
                            fmt_sig(r.bad.value()),
                            fmt_ln_p(r.scores.ln_pval_ref),
                            fmt_ln_p(r.scores.ln_pval_alt),
                            fmt_sig(r.scores.es_ref),
                            fmt_sig(r.scores.es_alt),
                        ]);
                        row
                    }),
                )?;
                written.push(path);
            }
            None if !all => return Err(missing("test")),
            None => {}
        }
        if let Some(comb) = &project.combined {
            let path = dir.join(COMBINED_FILE);
            let header = [
                "group", "snv", "chr", "pos", "ref", "alt", "n_obs", "pval_ref", "pval_alt", "es_ref", "es_alt",
                "final_pval", "fdr_bh", "final_es", "final_side",
            ];
            let mut q = vec![0.0; comb.records.len()];
            for g in &comb.groups {
                let idx: Vec<usize> = (0..comb.records.len()).filter(|&i| comb.records[i].group == g.name).collect();
                let p: Vec<f64> = idx.iter().map(|&i| comb.records[i].ln_final_pval).collect();
                for (&i, v) in idx.iter().zip(benjamini_hochberg(&p)) {
                    q[i] = v;
                }
            }
            table(
                &path,
                &header,
                comb.records.iter().zip(&q).map(|(r, &q)| {
                    let mut row = vec![r.group.clone(), r.snv.clone()];
                    row.extend(loc(&r.snv));
                    row.extend([
                        r.n_obs.to_string(),
                        fmt_ln_p(r.ln_comb_pval_ref),
                        fmt_ln_p(r.ln_comb_pval_alt),
                        fmt_sig(r.comb_es_ref),
                        fmt_sig(r.comb_es_alt),
                        fmt_ln_p(r.ln_final_pval),
                        fmt_ln_p(q),
                        fmt_sig(r.final_es),
                        r.final_side.to_string(),
                    ]);
                    row
                }),
            )?;
            written.push(path);
        }
    }

    if all || what == ExportTable::Difftest {
        match &project.difftest {
            Some(dt) => {
                let path = dir.join(DIFFTEST_FILE);
                let header = [
                    "snv", "chr", "pos", "ref", "alt", "method", "orientation", "p_control", "p_test", "se_control",
                    "se_test", "statistic", "pval_ref_alt", "pval_alt_ref", "final_pval", "fdr_bh", "n_control",
                    "n_test", "boundary",
                ];
                let ln_p: Vec<f64> = dt.records.iter().map(|r| r.final_pval.ln()).collect();
                let q = benjamini_hochberg(&ln_p);
                table(
                    &path,
                    &header,
                    dt.records.iter().zip(q).map(|(r, q)| {
                        let mut row = vec![r.snv.clone()];
                        row.extend(loc(&r.snv));
                        row.extend([
                            r.method.to_string(),
                            r.orientation.to_string(),
                            fmt_sig(r.p_control),
                            fmt_sig(r.p_test),
                            opt(r.se_control),
                            opt(r.se_test),
                            fmt_sig(r.statistic),
                            opt(r.pval_side1),
                            opt(r.pval_side2),
                            fmt_sig(r.final_pval),
                            fmt_ln_p(q),
                            r.n_control.to_string(),
                            r.n_test.to_string(),
                            r.boundary.to_string(),
                        ]);
                        row
                    }),
                )?;
                written.push(path);
            }
            None if !all => return Err(missing("difftest")),
            None => {}
        }
    }
    Ok(written)
}
