//! Reconciliation of achieved throughput against promises.
//!
//! Each promise that became active gets a ledger entry: the bytes its rate
//! promised over the interval it was active, and the bytes the flow actually
//! moved in that interval. The deficit of an entry is
//! `max(0, 1 - achieved / promised)`; entries are then grouped by route,
//! segment or site to find places where promises are systematically missed.
//! The deficit metric and thresholds here are this crate's own convention.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsim::ThroughputSample;
use crate::scheduler::PromiseId;
use crate::topology::NodeId;
use crate::units::{Bytes, Seconds, BITS_PER_BYTE};

pub const DEFAULT_DEFICIT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MIN_SAMPLES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountingConfig {
    pub deficit_threshold: f64,
    pub min_samples: usize,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        AccountingConfig {
            deficit_threshold: DEFAULT_DEFICIT_THRESHOLD,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

impl AccountingConfig {
    pub fn validate(&self) -> Result<(), AccountingError> {
        if !(self.deficit_threshold >= 0.0 && self.deficit_threshold <= 1.0) {
            return Err(AccountingError::InvalidConfig(format!(
                "deficit_threshold {} is outside [0, 1]",
                self.deficit_threshold
            )));
        }
        if self.min_samples == 0 {
            return Err(AccountingError::InvalidConfig("min_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountingError {
    #[error("invalid accounting config: {0}")]
    InvalidConfig(String),
    #[error("samples are not time-ordered at index {0}")]
    UnorderedSamples(usize),
    #[error("promise `{0}` promised zero bytes")]
    ZeroPromised(String),
    #[error("promise `{0}` is still open")]
    IncompleteEntry(String),
    #[error("interval [{0}, {1}] is not well-ordered")]
    InvalidInterval(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerOutcome {
    Completed,
    Cancelled,
    /// Still active when the run stopped.
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromiseLedgerEntry {
    pub promise: PromiseId,
    pub request: String,
    pub promised_bytes: Bytes,
    pub achieved_bytes: Bytes,
    pub active_start: Seconds,
    pub active_end: Seconds,
    pub route: Vec<NodeId>,
    pub outcome: LedgerOutcome,
}

impl PromiseLedgerEntry {
    /// Links of the route as unordered name pairs (smaller name first).
    pub fn segments(&self) -> Vec<(NodeId, NodeId)> {
        self.route
            .windows(2)
            .map(|w| {
                if w[0] <= w[1] {
                    (w[0].clone(), w[1].clone())
                } else {
                    (w[1].clone(), w[0].clone())
                }
            })
            .collect()
    }

    pub fn sites(&self) -> Vec<NodeId> {
        match (self.route.first(), self.route.last()) {
            (Some(a), Some(b)) if a != b => vec![a.clone(), b.clone()],
            (Some(a), _) => vec![a.clone()],
            _ => Vec::new(),
        }
    }
}

/// Bytes moved by a piecewise-constant rate series over `[start, end]`.
///
/// Each sample's rate holds until the next sample; the last one holds to
/// `end`. Before the first sample the rate is zero.
pub fn integrate_samples(samples: &[ThroughputSample], start: Seconds, end: Seconds) -> Result<Bytes, AccountingError> {
    if !(start <= end) {
        return Err(AccountingError::InvalidInterval(start, end));
    }
    if let Some(i) = samples.windows(2).position(|w| w[1].at < w[0].at) {
        return Err(AccountingError::UnorderedSamples(i + 1));
    }
    let mut bits = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let until = samples.get(i + 1).map_or(end, |n| n.at);
        let lo = s.at.max(start);
        let hi = until.min(end);
        if hi > lo {
            bits += s.rate * (hi - lo);
        }
    }
    Ok(bits / BITS_PER_BYTE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromiseReport {
    pub promise: PromiseId,
    pub request: String,
    pub fulfilled: bool,
    /// achieved / promised; may exceed 1 when provisions can borrow spare
    /// capacity.
    pub utilization: f64,
    pub deficit: f64,
}

pub fn reconcile(entry: &PromiseLedgerEntry, deficit_threshold: f64) -> Result<PromiseReport, AccountingError> {
    if entry.outcome == LedgerOutcome::Open {
        return Err(AccountingError::IncompleteEntry(entry.promise.to_string()));
    }
    if !(entry.promised_bytes > 0.0) {
        return Err(AccountingError::ZeroPromised(entry.promise.to_string()));
    }
    let utilization = entry.achieved_bytes.max(0.0) / entry.promised_bytes;
    let deficit = (1.0 - utilization).max(0.0);
    Ok(PromiseReport {
        promise: entry.promise.clone(),
        request: entry.request.clone(),
        fulfilled: deficit <= deficit_threshold,
        utilization,
        deficit,
    })
}

/// Reconciles every closed entry with a non-zero promise; open and empty
/// entries are skipped.
pub fn reconcile_ledger(ledger: &[PromiseLedgerEntry], deficit_threshold: f64) -> Vec<PromiseReport> {
    ledger
        .iter()
        .filter_map(|e| reconcile(e, deficit_threshold).ok())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Route,
    Segment,
    Site,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Route => "route",
            Grouping::Segment => "segment",
            Grouping::Site => "site",
        })
    }
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "route" => Ok(Grouping::Route),
            "segment" => Ok(Grouping::Segment),
            "site" => Ok(Grouping::Site),
            other => Err(format!("unknown grouping `{other}` (route|segment|site)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystematicReport {
    pub grouping: Grouping,
    /// Hop list for routes, the two link ends for segments, one name for sites.
    pub key: Vec<NodeId>,
    pub promise_count: usize,
    pub mean_deficit: f64,
    pub flagged: bool,
}

fn keys(entry: &PromiseLedgerEntry, grouping: Grouping) -> Vec<Vec<NodeId>> {
    match grouping {
        Grouping::Route => vec![entry.route.clone()],
        Grouping::Segment => entry.segments().into_iter().map(|(a, b)| vec![a, b]).collect(),
        Grouping::Site => entry.sites().into_iter().map(|s| vec![s]).collect(),
    }
}

/// One report per distinct key, sorted by key. Reports whose promise is not
/// in `ledger` are ignored.
pub fn aggregate(
    reports: &[PromiseReport],
    ledger: &[PromiseLedgerEntry],
    grouping: Grouping,
    min_samples: usize,
    deficit_threshold: f64,
) -> Vec<SystematicReport> {
    let entries: BTreeMap<&PromiseId, &PromiseLedgerEntry> = ledger.iter().map(|e| (&e.promise, e)).collect();
    let mut groups: BTreeMap<Vec<NodeId>, Vec<f64>> = BTreeMap::new();
    for r in reports {
        let Some(entry) = entries.get(&r.promise) else {
            continue;
        };
        for key in keys(entry, grouping) {
            groups.entry(key).or_default().push(r.deficit);
        }
    }
    groups
        .into_iter()
        .map(|(key, mut deficits)| {
            // summation order fixed so the mean does not depend on input order
            deficits.sort_by(f64::total_cmp);
            let count = deficits.len();
            let mean = deficits.iter().sum::<f64>() / count as f64;
            SystematicReport {
                grouping,
                key,
                promise_count: count,
                mean_deficit: mean,
                flagged: count >= min_samples && mean > deficit_threshold,
            }
        })
        .collect()
}
