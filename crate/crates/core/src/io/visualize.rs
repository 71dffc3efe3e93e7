//! Fit-versus-data diagnostics as SVG images and the TSV behind them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{mixture_truncated_mean, BadValue, CountTable, Orientation, OrientedCounts};

use super::export::fmt_sig;
use super::store::Project;

pub const DIAGNOSTICS_FILE: &str = "fit_diagnostics.tsv";

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const HEATMAP_MAX: u64 = 100;

/// One point of the diagnostic: observed and fitted mean variable count at a fixed count.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub orientation: Orientation,
    pub bad: BadValue,
    pub fixed: u64,
    pub n_obs: u64,
    pub observed_mean: f64,
    pub fitted_mean: Option<f64>,
}

pub fn diagnostics(project: &Project) -> Result<Vec<DiagnosticRow>> {
    let est = project.estimates.as_ref().ok_or_else(|| Error::InvalidArgument("nothing to plot: run `fit` first".into()))?;
    let s = &est.settings;
    let parts = project.counts.partitions();
    let mut rows = Vec::new();
    for (&bad, table) in &parts {
        for orientation in Orientation::ALL {
            let data = OrientedCounts::new(table, orientation, s.l);
            for fixed in data.fixed_values() {
                let row = data.row(fixed);
                let n: u64 = row.iter().map(|&(_, m)| m).sum();
                let sum: f64 = row.iter().map(|&(v, m)| v as f64 * m as f64).sum();
                let fitted = est
                    .get(orientation, bad, fixed)
                    .ok()
                    .and_then(|e| e.theta.mixture(s.model(), fixed, s.truncation()).ok())
                    .and_then(|mix| mixture_truncated_mean(&mix).ok());
                rows.push(DiagnosticRow { orientation, bad, fixed, n_obs: n, observed_mean: sum / n as f64, fitted_mean: fitted });
            }
        }
    }
    Ok(rows)
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    s
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, xmax: f64, ymax: f64) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - 20.0, 32.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (x0 + x1) / 2.0, H - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{}</text>"#, y0 + 16.0, fmt_sig(xmax));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y1 + 4.0, fmt_sig(ymax));
}

fn scatter(rows: &[&DiagnosticRow], title: &str) -> String {
    let xmax = rows.iter().map(|r| r.fixed as f64).fold(1.0, f64::max);
    let ymax = rows
        .iter()
        .flat_map(|r| [Some(r.observed_mean), r.fitted_mean])
        .flatten()
        .fold(1.0, f64::max);
    let px = |x: f64| MARGIN + x / xmax * (W - 20.0 - MARGIN);
    let py = |y: f64| H - MARGIN - y / ymax * (H - MARGIN - 32.0);
    let mut s = svg_open(title);
    axes(&mut s, "fixed allele count", "mean variable count", xmax, ymax);
    for r in rows {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#4477aa" fill-opacity="0.7"/>"##,
            px(r.fixed as f64),
            py(r.observed_mean)
        );
    }
    let path: Vec<String> = rows
        .iter()
        .filter_map(|r| r.fitted_mean.map(|m| format!("{:.2},{:.2}", px(r.fixed as f64), py(m))))
        .collect();
    if !path.is_empty() {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#cc3311" stroke-width="1.5"/>"##, path.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

fn heatmap(table: &CountTable, l: u64, title: &str) -> String {
    let max = table.iter().map(|(r, a, _)| r.max(a)).max().unwrap_or(l).clamp(l + 1, HEATMAP_MAX);
    let cells = (max - l + 1) as f64;
    let (cw, ch) = ((W - 20.0 - MARGIN) / cells, (H - MARGIN - 32.0) / cells);
    let top = table.iter().map(|(_, _, m)| m).max().unwrap_or(1) as f64;
    let mut s = svg_open(title);
    axes(&mut s, "reference count", "alternative count", max as f64, max as f64);
    for (r, a, m) in table.iter() {
        if r < l || a < l || r > max || a > max {
            continue;
        }
        let shade = ((m as f64).ln_1p() / top.ln_1p()).clamp(0.0, 1.0);
        let level = (255.0 * (1.0 - shade)).round() as u8;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},255)"/>"#,
            MARGIN + (r - l) as f64 * cw,
            H - MARGIN - (a - l + 1) as f64 * ch,
            cw,
            ch
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tag(o: Orientation) -> &'static str {
    match o {
        Orientation::RefGivenAlt => "ref_given_alt",
        Orientation::AltGivenRef => "alt_given_ref",
    }
}

/// Writes the diagnostic TSV, one scatter per `(orientation, BAD)` and one
/// count heatmap per BAD.
pub fn visualize(project: &Project, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = diagnostics(project)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut tsv = String::from("orientation\tbad\tfixed\tn_obs\tobserved_mean\tfitted_mean\n");
    for r in &rows {
        let fitted = r.fitted_mean.map(fmt_sig).unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{fitted}",
            r.orientation,
            fmt_sig(r.bad.value()),
            r.fixed,
            r.n_obs,
            fmt_sig(r.observed_mean)
        );
    }
    let path = dir.join(DIAGNOSTICS_FILE);
    fs::write(&path, tsv)?;
    written.push(path);
    let l = project.estimates.as_ref().map_or(project.counts.l, |e| e.settings.l);
    for (bad, table) in project.counts.partitions() {
        for o in Orientation::ALL {
            let sel: Vec<&DiagnosticRow> = rows.iter().filter(|r| r.bad == bad && r.orientation == o).collect();
            if sel.is_empty() {
                continue;
            }
            let path = dir.join(format!("fit_{}_bad{}.svg", tag(o), fmt_sig(bad.value())));
            fs::write(&path, scatter(&sel, &format!("{o}, BAD {bad}")))?;
            written.push(path);
        }
        let path = dir.join(format!("counts_bad{}.svg", fmt_sig(bad.value())));
        fs::write(&path, heatmap(&table, l, &format!("allele counts, BAD {bad}")))?;
        written.push(path);
    }
    Ok(written)
}
