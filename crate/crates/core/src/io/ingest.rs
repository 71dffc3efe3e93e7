//! Read-count ingestion from TSV tables and VCF-like files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AlleleCounts, BadValue, CountTable};

use super::bad::BadAnnotation;

pub const TSV_COLUMNS: [&str; 7] = ["chr", "pos", "id", "ref", "alt", "ref_count", "alt_count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Tsv,
    Vcf,
}

impl InputFormat {
    pub fn name(self) -> &'static str {
        match self {
            InputFormat::Tsv => "tsv",
            InputFormat::Vcf => "vcf",
        }
    }

    /// Whether a directory entry looks like an input of this format.
    pub fn matches(self, path: &Path) -> bool {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_ascii_lowercase();
        match self {
            InputFormat::Tsv => name.ends_with(".tsv") || name.ends_with(".txt"),
            InputFormat::Vcf => name.ends_with(".vcf"),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            "vcf" | "vcf-like" => Ok(InputFormat::Vcf),
            _ => Err(Error::InvalidArgument(format!("unknown input format '{s}' (expected tsv or vcf)"))),
        }
    }
}

/// One parsed line of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadCountRecord {
    pub chrom: String,
    /// 1-based.
    pub pos: u64,
    pub id: String,
    pub ref_base: char,
    pub alt_base: char,
    pub ref_count: u64,
    pub alt_count: u64,
    pub bad: f64,
    pub sample: String,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn base(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next().map(|c| c.to_ascii_uppercase()), it.next()) {
        (Some(c @ ('A' | 'C' | 'G' | 'T')), None) => Some(c),
        _ => None,
    }
}

fn sample_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("sample").to_string()
}

/// Parses a TSV table; the sample is named after the file stem.
pub fn parse_tsv(path: &Path) -> Result<Vec<ReadCountRecord>> {
    let text = fs::read_to_string(path)?;
    let sample = sample_name(path);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else { return Ok(Vec::new()) };
    let cols: Vec<String> = header.trim_start_matches('#').split('\t').map(|c| c.trim().to_ascii_lowercase()).collect();
    if cols.len() < TSV_COLUMNS.len() || cols[..TSV_COLUMNS.len()] != TSV_COLUMNS {
        return Err(parse_err(path, 1, format!("header must start with {}", TSV_COLUMNS.join("\t"))));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() < TSV_COLUMNS.len() {
            return Err(Error::MissingField { path: path.to_path_buf(), line: n, field: TSV_COLUMNS[f.len()].into() });
        }
        let num = |k: usize| f[k].parse::<u64>().map_err(|_| parse_err(path, n, format!("{} '{}' is not a non-negative integer", TSV_COLUMNS[k], f[k])));
        let pos = num(1)?;
        if pos == 0 {
            return Err(parse_err(path, n, "positions are 1-based"));
        }
        let ref_base = base(f[3]).ok_or_else(|| parse_err(path, n, format!("ref '{}' is not one of A, C, G, T", f[3])))?;
        let alt_base = base(f[4]).ok_or_else(|| parse_err(path, n, format!("alt '{}' is not one of A, C, G, T", f[4])))?;
        if ref_base == alt_base {
            return Err(parse_err(path, n, "ref and alt alleles are identical"));
        }
        out.push(ReadCountRecord {
            chrom: f[0].to_string(),
            pos,
            id: f[2].to_string(),
            ref_base,
            alt_base,
            ref_count: num(5)?,
            alt_count: num(6)?,
            bad: 1.0,
            sample: sample.clone(),
        });
    }
    Ok(out)
}

/// Parses the fixed columns and the per-sample `AD` field of a VCF-like file.
/// Indels, multi-allelic sites and samples without depths are skipped.
pub fn parse_vcf(path: &Path) -> Result<Vec<ReadCountRecord>> {
    let text = fs::read_to_string(path)?;
    let mut samples: Option<Vec<String>> = None;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.starts_with("##") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if line.starts_with('#') {
            if f.len() < 10 || f[8] != "FORMAT" {
                return Err(parse_err(path, n, "header line needs FORMAT and at least one sample column"));
            }
            samples = Some(f[9..].iter().map(|s| s.trim().to_string()).collect());
            continue;
        }
        let names = samples.as_ref().ok_or_else(|| parse_err(path, n, "record before the #CHROM header"))?;
        if f.len() < 9 + names.len() {
            return Err(parse_err(path, n, format!("expected {} columns, found {}", 9 + names.len(), f.len())));
        }
        let pos: u64 = f[1].parse().map_err(|_| parse_err(path, n, format!("position '{}' is not an integer", f[1])))?;
        if pos == 0 {
            return Err(parse_err(path, n, "positions are 1-based"));
        }
        let (Some(ref_base), Some(alt_base)) = (base(f[3]), base(f[4])) else {
            debug!("{}:{n}: skipping non-SNV site {}>{}", path.display(), f[3], f[4]);
            continue;
        };
        let ad = f[8]
            .split(':')
            .position(|k| k == "AD")
            .ok_or_else(|| Error::MissingField { path: path.to_path_buf(), line: n, field: "AD".into() })?;
        for (name, value) in names.iter().zip(&f[9..]) {
            let Some(depths) = value.trim().split(':').nth(ad) else { continue };
            if depths == "." {
                continue;
            }
            let parts: Vec<&str> = depths.split(',').collect();
            if parts.len() != 2 {
                return Err(parse_err(path, n, format!("AD '{depths}' must hold two depths")));
            }
            let d = |s: &str| s.parse::<u64>().map_err(|_| parse_err(path, n, format!("AD '{depths}' is not a pair of integers")));
            out.push(ReadCountRecord {
                chrom: f[0].to_string(),
                pos,
                id: f[2].to_string(),
                ref_base,
                alt_base,
                ref_count: d(parts[0])?,
                alt_count: d(parts[1])?,
                bad: 1.0,
                sample: name.clone(),
            });
        }
    }
    Ok(out)
}

/// A variant site; its position in [`Dataset::snvs`] is its index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Snv {
    pub chrom: String,
    pub pos: u64,
    pub ref_base: char,
    pub alt_base: char,
    pub id: String,
}

impl Snv {
    pub fn key(&self) -> (&str, u64, char, char) {
        (&self.chrom, self.pos, self.ref_base, self.alt_base)
    }
}

/// One observation of an indexed SNV in a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRecord {
    pub snv: u32,
    pub counts: AlleleCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    /// File names the sample was read from.
    pub sources: Vec<String>,
    pub records: Vec<SampleRecord>,
}

impl Sample {
    /// Multiplicity tables per BAD.
    pub fn tables(&self) -> BTreeMap<BadValue, CountTable> {
        let mut out: BTreeMap<BadValue, CountTable> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.counts.bad).or_default().add(r.counts.ref_count, r.counts.alt_count, 1);
        }
        out
    }
}

/// Counters of what ingestion dropped or defaulted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub parsed: u64,
    pub homozygous: u64,
    pub below_threshold: u64,
    /// Records outside every BAD interval, given BAD 1.
    pub default_bad: u64,
}

/// The deduplicated counts store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub l: u64,
    pub snvs: Vec<Snv>,
    pub samples: Vec<Sample>,
    pub stats: IngestStats,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.samples.iter().all(|s| s.records.is_empty())
    }

    pub fn n_records(&self) -> usize {
        self.samples.iter().map(|s| s.records.len()).sum()
    }

    /// Pooled `(ref, alt)` multiplicities per BAD over all samples.
    pub fn partitions(&self) -> BTreeMap<BadValue, CountTable> {
        let mut out: BTreeMap<BadValue, CountTable> = BTreeMap::new();
        for s in &self.samples {
            for r in &s.records {
                out.entry(r.counts.bad).or_default().add(r.counts.ref_count, r.counts.alt_count, 1);
            }
        }
        out
    }

    pub fn sample(&self, name: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.name == name)
    }

    /// Observations per SNV index over the given samples, in sample order.
    pub fn by_snv<'a>(&'a self, samples: &[&'a Sample]) -> BTreeMap<u32, Vec<(&'a str, AlleleCounts)>> {
        let mut out: BTreeMap<u32, Vec<(&str, AlleleCounts)>> = BTreeMap::new();
        for s in samples {
            for r in &s.records {
                out.entry(r.snv).or_default().push((&s.name, r.counts));
            }
        }
        out
    }

    /// Builds the store from parsed records, independent of their order.
    pub fn from_records(records: Vec<ReadCountRecord>, l: u64, bad: Option<&BadAnnotation>) -> Result<Self> {
        let mut stats = IngestStats { parsed: records.len() as u64, ..Default::default() };
        let mut kept = Vec::new();
        for mut r in records {
            if r.ref_count == 0 || r.alt_count == 0 {
                stats.homozygous += 1;
                continue;
            }
            if r.ref_count < l || r.alt_count < l {
                stats.below_threshold += 1;
                continue;
            }
            r.bad = match bad.and_then(|b| b.lookup(&r.chrom, r.pos)) {
                Some(v) => v,
                None => {
                    stats.default_bad += 1;
                    1.0
                }
            };
            kept.push(r);
        }
        if bad.is_some() && stats.default_bad > 0 {
            warn!("{} records fall outside every BAD interval and were given BAD 1", stats.default_bad);
        }
        // SNV index: sorted keys; the id is the smallest named id seen
        let mut ids: BTreeMap<(String, u64, char, char), BTreeSet<String>> = BTreeMap::new();
        for r in &kept {
            let e = ids.entry((r.chrom.clone(), r.pos, r.ref_base, r.alt_base)).or_default();
            if !r.id.is_empty() && r.id != "." {
                e.insert(r.id.clone());
            }
        }
        // ids must identify SNVs, so a name already taken falls back to the locus
        let mut used = BTreeSet::new();
        let snvs: Vec<Snv> = ids
            .into_iter()
            .map(|((chrom, pos, ref_base, alt_base), names)| {
                let locus = format!("{chrom}:{pos}:{ref_base}>{alt_base}");
                let id = names.into_iter().find(|n| !used.contains(n)).unwrap_or(locus);
                used.insert(id.clone());
                Snv { chrom, pos, ref_base, alt_base, id }
            })
            .collect();
        let index: BTreeMap<(&str, u64, char, char), u32> =
            snvs.iter().enumerate().map(|(i, s)| (s.key(), i as u32)).collect();
        let mut samples: BTreeMap<String, Vec<SampleRecord>> = BTreeMap::new();
        for r in &kept {
            let snv = index[&(r.chrom.as_str(), r.pos, r.ref_base, r.alt_base)];
            let counts = AlleleCounts::new(r.ref_count, r.alt_count, BadValue::new(r.bad)?);
            samples.entry(r.sample.clone()).or_default().push(SampleRecord { snv, counts });
        }
        let samples = samples
            .into_iter()
            .map(|(name, mut records)| {
                records.sort();
                Sample { name, sources: Vec::new(), records }
            })
            .collect();
        Ok(Dataset { l, snvs, samples, stats })
    }
}

/// Expands directories into their input files, sorted by name.
pub fn expand_inputs(paths: &[PathBuf], format: InputFormat) -> Result<Vec<PathBuf>> {
    let mut out = BTreeSet::new();
    for p in paths {
        if p.is_dir() {
            for entry in fs::read_dir(p)? {
                let path = entry?.path();
                if path.is_file() && format.matches(&path) {
                    out.insert(path);
                }
            }
        } else {
            // surfaces a missing file as an I/O error
            fs::metadata(p)?;
            out.insert(p.clone());
        }
    }
    Ok(out.into_iter().collect())
}

/// Parses every input (in parallel), joins BAD and deduplicates.
pub fn ingest(paths: &[PathBuf], format: InputFormat, bad_source: Option<&Path>, l: u64) -> Result<Dataset> {
    let files = expand_inputs(paths, format)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bad = bad_source.map(BadAnnotation::from_path).transpose()?;
    let parsed: Vec<(PathBuf, Vec<ReadCountRecord>)> = files
        .par_iter()
        .map(|f| {
            let recs = match format {
                InputFormat::Tsv => parse_tsv(f)?,
                InputFormat::Vcf => parse_vcf(f)?,
            };
            Ok((f.clone(), recs))
        })
        .collect::<Result<_>>()?;
    let mut sources: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut all = Vec::new();
    for (file, recs) in parsed {
        let fname = file.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        for r in &recs {
            sources.entry(r.sample.clone()).or_default().insert(fname.clone());
        }
        all.extend(recs);
    }
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ds = Dataset::from_records(all, l, bad.as_ref())?;
    for s in &mut ds.samples {
        s.sources = sources.remove(&s.name).unwrap_or_default().into_iter().collect();
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ds)
}
