//! Train/test/validation assignment of sub-patches.
//!
//! Sub-patches without any building always go to validation. The remaining
//! ids are sorted, shuffled with a Fisher-Yates pass driven by ChaCha8
//! (`rand_chacha::ChaCha8Rng::seed_from_u64(seed)`), and cut into
//! contiguous train/test/val blocks whose sizes come from largest-remainder
//! apportionment of the ratios.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::SubPatch;

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitReason {
    ForcedEmptyToVal,
    RatioAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignments: BTreeMap<String, Split>,
    pub rule_trace: BTreeMap<String, SplitReason>,
}

impl SplitManifest {
    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Minimal input to the splitter: an id and whether it shows any building.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitItem {
    pub id: String,
    pub contains_building: bool,
}

impl From<&SubPatch> for SplitItem {
    fn from(s: &SubPatch) -> Self {
        Self { id: s.id(), contains_building: s.contains_building }
    }
}

/// Seat counts per block by largest remainder; ties go to the earlier
/// block (train before test before val).
pub fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut seats = quotas.map(|q| q.floor() as usize);
    let assigned: usize = seats.iter().sum();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps index order among equal remainders.
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.partial_cmp(&ri).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().cycle().take(n.saturating_sub(assigned)) {
        seats[k] += 1;
    }
    seats
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::BadRatios(format!("ratios must be non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(format!("ratios sum to {sum}, expected 1")));
    }
    Ok(())
}

pub fn make_split(items: &[SplitItem], ratios: [f64; 3], seed: u64) -> Result<SplitManifest> {
    check_ratios(ratios)?;
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::DuplicateId(item.id.clone()));
        }
    }

    let mut assignments = BTreeMap::new();
    let mut rule_trace = BTreeMap::new();
    let mut candidates: Vec<&str> = Vec::new();
    for item in items {
        if item.contains_building {
            candidates.push(&item.id);
        } else {
            assignments.insert(item.id.clone(), Split::Val);
            rule_trace.insert(item.id.clone(), SplitReason::ForcedEmptyToVal);
        }
    }
    candidates.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..candidates.len()).rev() {
        let j = rng.random_range(0..=i);
        candidates.swap(i, j);
    }

    let [n_train, n_test, _] = apportion(candidates.len(), ratios);
    for (pos, id) in candidates.into_iter().enumerate() {
        let split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_test {
            Split::Test
        } else {
            Split::Val
        };
        assignments.insert(id.to_string(), split);
        rule_trace.insert(id.to_string(), SplitReason::RatioAssignment);
    }

    Ok(SplitManifest { seed, ratios, assignments, rule_trace })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "kebab-case")]
pub enum SplitViolation {
    DuplicateId(String),
    EmptyPatchNotInVal(String),
    MissingId(String),
    UnknownId(String),
    MissingTrace(String),
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitViolation::DuplicateId(id) => write!(f, "duplicate id: {id}"),
            SplitViolation::EmptyPatchNotInVal(id) => write!(f, "empty-patch-not-in-val: {id}"),
            SplitViolation::MissingId(id) => write!(f, "missing id: {id}"),
            SplitViolation::UnknownId(id) => write!(f, "unknown id: {id}"),
            SplitViolation::MissingTrace(id) => write!(f, "missing rule trace: {id}"),
        }
    }
}

/// Checks a manifest against the sub-patch list. An empty result means valid.
pub fn verify_split(manifest: &SplitManifest, items: &[SplitItem]) -> Vec<SplitViolation> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            violations.push(SplitViolation::DuplicateId(item.id.clone()));
            continue;
        }
        match manifest.assignments.get(&item.id) {
            None => violations.push(SplitViolation::MissingId(item.id.clone())),
            Some(&split) => {
                if !item.contains_building && split != Split::Val {
                    violations.push(SplitViolation::EmptyPatchNotInVal(item.id.clone()));
                }
                if !manifest.rule_trace.contains_key(&item.id) {
                    violations.push(SplitViolation::MissingTrace(item.id.clone()));
                }
            }
        }
    }
    for id in manifest.assignments.keys() {
        if !seen.contains(id.as_str()) {
            violations.push(SplitViolation::UnknownId(id.clone()));
        }
    }
    violations
}
