//! The sliding-window sweep over orientations, BAD partitions and fixed counts.

use std::collections::BTreeMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_window, BadValue, CountTable, Orientation, OrientedCounts};

use super::{fit_window_data, FitSettings, ParameterVector, WindowData, WindowEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EstimateKey {
    pub orientation: Orientation,
    pub bad: BadValue,
    pub fixed_value: u64,
}

/// Window estimates keyed by `(orientation, BAD, fixed count)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub settings: FitSettings,
    #[serde(with = "entries")]
    estimates: BTreeMap<EstimateKey, WindowEstimate>,
}

mod entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<EstimateKey, WindowEstimate>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<EstimateKey, WindowEstimate>, D::Error> {
        let v: Vec<(EstimateKey, WindowEstimate)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

impl EstimateTable {
    pub fn new(settings: FitSettings) -> Self {
        EstimateTable { settings, estimates: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: EstimateKey, est: WindowEstimate) {
        self.estimates.insert(key, est);
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EstimateKey, &WindowEstimate)> {
        self.estimates.iter()
    }

    /// BAD values present in the table.
    pub fn bads(&self) -> Vec<BadValue> {
        let mut v: Vec<BadValue> = self.estimates.keys().map(|k| k.bad).collect();
        v.dedup();
        v.sort();
        v.dedup();
        v
    }

    /// The usable estimate for a window, or `MissingEstimate`.
    pub fn get(&self, orientation: Orientation, bad: BadValue, fixed_value: u64) -> Result<&WindowEstimate> {
        self.estimates
            .get(&EstimateKey { orientation, bad, fixed_value })
            .filter(|e| e.is_usable())
            .ok_or_else(|| Error::MissingEstimate {
                orientation: orientation.to_string(),
                bad: bad.value(),
                fixed_value,
            })
    }
}

/// Fits every window of one orientation of one BAD partition, in increasing
/// fixed count, each warm-started from the previous usable estimate.
pub fn fit_partition(
    table: &CountTable,
    orientation: Orientation,
    bad: BadValue,
    settings: &FitSettings,
) -> Vec<(u64, WindowEstimate)> {
    let data = OrientedCounts::new(table, orientation, settings.l);
    let Some(max) = data.max_fixed() else { return Vec::new() };
    let trunc = settings.truncation();
    let mut init = ParameterVector::initial(settings, bad);
    let mut prev: Option<WindowEstimate> = None;
    let mut out = Vec::new();
    for fixed in settings.l..=max {
        let est = match build_window(&data, fixed, settings.m) {
            Err(e) => WindowEstimate::failed(fixed, init, &e),
            Ok(slice) => match &prev {
                // identical window and no fixed-value dependent prior: same fit
                Some(p) if settings.alpha == 0.0 && p.lo == slice.lo && p.hi == slice.hi && p.is_usable() => {
                    WindowEstimate { fixed_value: fixed, ..p.clone() }
                }
                _ => {
                    let wd = WindowData::new(&slice, settings.model_kind, trunc);
                    match fit_window_data(&wd, &slice, settings, &init) {
                        Ok(e) => e,
                        Err(e) => WindowEstimate::failed(fixed, init, &e),
                    }
                }
            },
        };
        if let Some(err) = &est.error {
            warn!("{orientation} BAD={bad} fixed={fixed}: window not fitted: {err}");
        } else {
            if !est.converged {
                debug!("{orientation} BAD={bad} fixed={fixed}: optimizer stopped after {} evaluations", est.evals);
            }
            init = est.theta;
        }
        prev = Some(est.clone());
        out.push((fixed, est));
    }
    out
}

/// Fits all windows for both orientations and every BAD partition. Chains run
/// in parallel; results do not depend on scheduling.
pub fn fit_global(partitions: &BTreeMap<BadValue, CountTable>, settings: &FitSettings) -> Result<EstimateTable> {
    settings.validate()?;
    if partitions.values().all(CountTable::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let chains: Vec<(Orientation, BadValue, &CountTable)> = partitions
        .iter()
        .flat_map(|(&bad, t)| Orientation::ALL.into_iter().map(move |o| (o, bad, t)))
        .collect();
    let results: Vec<(Orientation, BadValue, Vec<(u64, WindowEstimate)>)> = chains
        .par_iter()
        .map(|&(o, bad, t)| (o, bad, fit_partition(t, o, bad, settings)))
        .collect();
    let mut table = EstimateTable::new(settings.clone());
    for (orientation, bad, ests) in results {
        for (fixed_value, est) in ests {
            table.insert(EstimateKey { orientation, bad, fixed_value }, est);
        }
    }
    Ok(table)
}
