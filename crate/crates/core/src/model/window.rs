//! Aggregated count tables and the sliding window over the fixed allele.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which allele is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// Reference count modelled given the alternative count.
    #[serde(rename = "ref|alt")]
    RefGivenAlt,
    /// Alternative count modelled given the reference count.
    #[serde(rename = "alt|ref")]
    AltGivenRef,
}

impl Orientation {
    pub const ALL: [Orientation; 2] = [Orientation::RefGivenAlt, Orientation::AltGivenRef];

    pub fn name(self) -> &'static str {
        match self {
            Orientation::RefGivenAlt => "ref|alt",
            Orientation::AltGivenRef => "alt|ref",
        }
    }

    /// `(fixed, variable)` from `(ref, alt)`.
    pub fn split(self, ref_count: u64, alt_count: u64) -> (u64, u64) {
        match self {
            Orientation::RefGivenAlt => (alt_count, ref_count),
            Orientation::AltGivenRef => (ref_count, alt_count),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref|alt" | "ref" => Ok(Orientation::RefGivenAlt),
            "alt|ref" | "alt" => Ok(Orientation::AltGivenRef),
            _ => Err(Error::InvalidArgument(format!("unknown orientation '{s}'"))),
        }
    }
}

/// One observation of an SNV in one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AlleleCounts {
    pub ref_count: u64,
    pub alt_count: u64,
    pub bad: super::BadValue,
}

impl AlleleCounts {
    pub fn new(ref_count: u64, alt_count: u64, bad: super::BadValue) -> Self {
        AlleleCounts { ref_count, alt_count, bad }
    }

    /// `(fixed, variable)` in the given orientation.
    pub fn split(&self, orientation: Orientation) -> (u64, u64) {
        orientation.split(self.ref_count, self.alt_count)
    }
}

/// `(ref, alt) -> multiplicity`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    counts: BTreeMap<(u64, u64), u64>,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, ref_count: u64, alt_count: u64, mult: u64) {
        if mult > 0 {
            *self.counts.entry((ref_count, alt_count)).or_insert(0) += mult;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64, u64)> + '_ {
        self.counts.iter().map(|(&(r, a), &m)| (r, a, m))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of distinct `(ref, alt)` pairs.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, ref_count: u64, alt_count: u64) -> u64 {
        self.counts.get(&(ref_count, alt_count)).copied().unwrap_or(0)
    }
}

impl FromIterator<(u64, u64)> for CountTable {
    fn from_iter<I: IntoIterator<Item = (u64, u64)>>(iter: I) -> Self {
        let mut t = CountTable::new();
        for (r, a) in iter {
            t.add(r, a, 1);
        }
        t
    }
}

/// A count table viewed in one orientation and restricted to counts `>= l`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedCounts {
    pub orientation: Orientation,
    pub l: u64,
    rows: BTreeMap<u64, Vec<(u64, u64)>>,
    totals: BTreeMap<u64, u64>,
}

impl OrientedCounts {
    pub fn new(table: &CountTable, orientation: Orientation, l: u64) -> Self {
        let mut rows: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
        for (r, a, m) in table.iter() {
            let (fixed, var) = orientation.split(r, a);
            if fixed >= l && var >= l {
                rows.entry(fixed).or_default().push((var, m));
            }
        }
        let mut totals = BTreeMap::new();
        for (fixed, row) in rows.iter_mut() {
            row.sort_unstable();
            totals.insert(*fixed, row.iter().map(|&(_, m)| m).sum());
        }
        OrientedCounts { orientation, l, rows, totals }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_fixed(&self) -> Option<u64> {
        self.rows.keys().next_back().copied()
    }

    pub fn fixed_values(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows.keys().copied()
    }

    /// `(variable, multiplicity)` pairs observed at `fixed`.
    pub fn row(&self, fixed: u64) -> &[(u64, u64)] {
        self.rows.get(&fixed).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn count_between(&self, lo: u64, hi: u64) -> u64 {
        self.totals.range(lo..=hi).map(|(_, n)| n).sum()
    }
}

/// One aggregated observation inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub fixed: u64,
    pub variable: u64,
    pub mult: u64,
}

/// Observations whose fixed count lies in `lo..=hi`. The fixed count is kept
/// per observation because `r = b x + a` varies across the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSlice {
    pub fixed_value: u64,
    pub lo: u64,
    pub hi: u64,
    pub observations: Vec<Observation>,
    pub n_obs: u64,
}

impl WindowSlice {
    /// Wraps explicit observations; bounds are taken from their fixed counts.
    pub fn from_observations(fixed_value: u64, observations: Vec<Observation>) -> Self {
        let lo = observations.iter().map(|o| o.fixed).min().unwrap_or(fixed_value).min(fixed_value);
        let hi = observations.iter().map(|o| o.fixed).max().unwrap_or(fixed_value).max(fixed_value);
        let n_obs = observations.iter().map(|o| o.mult).sum();
        WindowSlice { fixed_value, lo, hi, observations, n_obs }
    }

    pub fn is_empty(&self) -> bool {
        self.n_obs == 0
    }

    /// Smallest fixed count actually present.
    pub fn x_min(&self) -> Option<u64> {
        self.observations.iter().map(|o| o.fixed).min()
    }

    pub fn x_max(&self) -> Option<u64> {
        self.observations.iter().map(|o| o.fixed).max()
    }

    pub fn max_variable(&self) -> u64 {
        self.observations.iter().map(|o| o.variable).max().unwrap_or(0)
    }

    /// Number of distinct variable counts.
    pub fn unique_variable(&self) -> usize {
        let mut v: Vec<u64> = self.observations.iter().map(|o| o.variable).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

/// Window centred at `fixed_value`, grown by one fixed count on each side per
/// step (never below `l` nor past the largest fixed count) until it holds at
/// least `m` observations. Boundary rows are always included whole.
pub fn build_window(data: &OrientedCounts, fixed_value: u64, m: u64) -> Result<WindowSlice> {
    if m == 0 {
        return Err(Error::InvalidArgument("window size m must be positive".into()));
    }
    if fixed_value < data.l {
        return Err(Error::domain(format!(
            "fixed value {fixed_value} is below the truncation threshold {}",
            data.l
        )));
    }
    let Some(max) = data.max_fixed() else {
        return Err(Error::EmptyWindow { fixed_value });
    };
    let (mut lo, mut hi) = (fixed_value, fixed_value);
    let mut n = data.count_between(lo, hi);
    while n < m && (lo > data.l || hi < max) {
        if lo > data.l {
            lo -= 1;
        }
        if hi < max {
            hi += 1;
        }
        n = data.count_between(lo, hi);
    }
    if n == 0 {
        return Err(Error::EmptyWindow { fixed_value });
    }
    let observations = data
        .rows
        .range(lo..=hi)
        .flat_map(|(&fixed, row)| row.iter().map(move |&(variable, mult)| Observation { fixed, variable, mult }))
        .collect();
    Ok(WindowSlice { fixed_value, lo, hi, observations, n_obs: n })
}
