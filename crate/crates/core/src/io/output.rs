//! Result files written by a run.

use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::accounting::{
    aggregate, reconcile_ledger, AccountingConfig, Grouping, LedgerOutcome, PromiseLedgerEntry, PromiseReport,
    SystematicReport,
};
use crate::flowsim::{CompletionKind, SimOutput, ThroughputSample};
use crate::scheduler::{AdjustmentReason, PromiseId};
use crate::topology::NodeId;
use crate::units::{gigabytes, to_gbps, to_gigabytes};

use super::{check_version, read_file, IoError, FORMAT_VERSION};

pub const TIMELINE_HEADER: &str = "time_s,flow_id,class,rate_gbps";

/// Fixed-point with at most nine decimals, trailing zeros trimmed but at
/// least one decimal kept: `7.0`, `0.1`, `857.142857143`.
pub fn format_number(x: f64) -> String {
    let mut s = format!("{x:.9}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    if s == "-0.0" {
        s = "0.0".into();
    }
    s
}

/// Writes the timeline CSV. Rows keep the input order, which the engine
/// already sorts by (time, flow id).
pub fn emit_timeline<W: Write>(timeline: &[ThroughputSample], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{TIMELINE_HEADER}")?;
    for s in timeline {
        writeln!(
            sink,
            "{},{},{},{}",
            format_number(s.at),
            s.flow,
            s.class.as_str(),
            format_number(to_gbps(s.rate))
        )?;
    }
    sink.flush()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionFileRecord {
    pub id: String,
    pub kind: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub promise: Option<PromiseId>,
    pub submitted_at_s: f64,
    pub activated_at_s: Option<f64>,
    pub completed_at_s: f64,
    pub volume_gb: f64,
    pub delivered_gb: f64,
    pub deadline_s: Option<f64>,
    pub met_deadline: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionsFile {
    pub format_version: u64,
    pub end_time_s: f64,
    pub completions: Vec<CompletionFileRecord>,
    /// Requests never granted before the run stopped.
    pub unserved: Vec<String>,
}

pub fn emit_completions(out: &SimOutput) -> CompletionsFile {
    CompletionsFile {
        format_version: FORMAT_VERSION,
        end_time_s: out.end_time,
        completions: out
            .completions
            .iter()
            .map(|c| CompletionFileRecord {
                id: c.id.clone(),
                kind: match c.kind {
                    CompletionKind::Transfer => "transfer".into(),
                    CompletionKind::Load => "load".into(),
                },
                src: c.src.clone(),
                dst: c.dst.clone(),
                promise: c.promise.clone(),
                submitted_at_s: c.submitted_at,
                activated_at_s: c.activated_at,
                completed_at_s: c.completed_at,
                volume_gb: to_gigabytes(c.volume),
                delivered_gb: to_gigabytes(c.delivered),
                deadline_s: c.deadline,
                met_deadline: c.met_deadline,
            })
            .collect(),
        unserved: out.unserved.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerFileEntry {
    pub promise: PromiseId,
    pub request: String,
    pub promised_gb: f64,
    pub achieved_gb: f64,
    pub active_start_s: f64,
    pub active_end_s: f64,
    pub route: Vec<NodeId>,
    pub outcome: LedgerOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustmentRecord {
    pub at_s: f64,
    pub promise: PromiseId,
    pub request: String,
    pub old_rate_gbps: f64,
    pub new_rate_gbps: f64,
    pub new_end_s: f64,
    pub reason: AdjustmentReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerFile {
    pub format_version: u64,
    pub accounting: AccountingConfig,
    pub entries: Vec<LedgerFileEntry>,
    #[serde(default)]
    pub adjustments: Vec<AdjustmentRecord>,
}

impl LedgerFile {
    pub fn entries(&self) -> Vec<PromiseLedgerEntry> {
        self.entries
            .iter()
            .map(|e| PromiseLedgerEntry {
                promise: e.promise.clone(),
                request: e.request.clone(),
                promised_bytes: gigabytes(e.promised_gb),
                achieved_bytes: gigabytes(e.achieved_gb),
                active_start: e.active_start_s,
                active_end: e.active_end_s,
                route: e.route.clone(),
                outcome: e.outcome,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), IoError> {
        check_version("ledger", self.format_version)?;
        self.accounting.validate()?;
        for e in &self.entries {
            if !(e.promised_gb >= 0.0) || !(e.achieved_gb >= 0.0) {
                return Err(IoError::Invalid(format!(
                    "ledger entry {}: negative byte count",
                    e.promise
                )));
            }
            if !(e.active_start_s <= e.active_end_s) {
                return Err(IoError::Invalid(format!(
                    "ledger entry {}: interval is not well-ordered",
                    e.promise
                )));
            }
            if e.route.len() < 2 {
                return Err(IoError::Invalid(format!(
                    "ledger entry {}: route needs two hops",
                    e.promise
                )));
            }
        }
        Ok(())
    }
}

pub fn emit_ledger(out: &SimOutput, accounting: AccountingConfig) -> LedgerFile {
    LedgerFile {
        format_version: FORMAT_VERSION,
        accounting,
        entries: out
            .ledger
            .iter()
            .map(|e| LedgerFileEntry {
                promise: e.promise.clone(),
                request: e.request.clone(),
                promised_gb: to_gigabytes(e.promised_bytes),
                achieved_gb: to_gigabytes(e.achieved_bytes),
                active_start_s: e.active_start,
                active_end_s: e.active_end,
                route: e.route.clone(),
                outcome: e.outcome,
            })
            .collect(),
        adjustments: out
            .adjustments
            .iter()
            .map(|a| AdjustmentRecord {
                at_s: a.at,
                promise: a.adjustment.promise.clone(),
                request: a.adjustment.request.clone(),
                old_rate_gbps: to_gbps(a.adjustment.old_rate),
                new_rate_gbps: to_gbps(a.adjustment.new_rate),
                new_end_s: a.adjustment.new_end,
                reason: a.adjustment.reason,
            })
            .collect(),
    }
}

pub fn parse_ledger(path: impl AsRef<FsPath>) -> Result<LedgerFile, IoError> {
    let path = path.as_ref();
    let ledger: LedgerFile = serde_json::from_str(&read_file(path)?).map_err(|e| IoError::Json {
        what: path.display().to_string(),
        message: e.to_string(),
    })?;
    ledger.validate()?;
    Ok(ledger)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportsFile {
    pub format_version: u64,
    pub accounting: AccountingConfig,
    pub promises: Vec<PromiseReport>,
    pub route: Vec<SystematicReport>,
    pub segment: Vec<SystematicReport>,
    pub site: Vec<SystematicReport>,
}

impl ReportsFile {
    pub fn group(&self, grouping: Grouping) -> &[SystematicReport] {
        match grouping {
            Grouping::Route => &self.route,
            Grouping::Segment => &self.segment,
            Grouping::Site => &self.site,
        }
    }
}

/// Reconciles and aggregates a ledger as stored on disk, so that a later
/// `report` over the same file reproduces these numbers exactly.
pub fn emit_reports(ledger: &LedgerFile, accounting: AccountingConfig) -> ReportsFile {
    let entries = ledger.entries();
    let promises = reconcile_ledger(&entries, accounting.deficit_threshold);
    let group = |g| {
        aggregate(
            &promises,
            &entries,
            g,
            accounting.min_samples,
            accounting.deficit_threshold,
        )
    };
    ReportsFile {
        format_version: FORMAT_VERSION,
        accounting,
        route: group(Grouping::Route),
        segment: group(Grouping::Segment),
        site: group(Grouping::Site),
        promises,
    }
}

fn write(dir: &FsPath, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), IoError> {
    let path = dir.join(name);
    let mut buf = Vec::new();
    f(&mut buf)
        .and_then(|_| fs::write(&path, &buf))
        .map_err(|e| IoError::SinkUnwritable {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

fn json<T: Serialize>(value: &T) -> impl FnOnce(&mut Vec<u8>) -> std::io::Result<()> + '_ {
    move |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)?;
        buf.push(b'\n');
        Ok(())
    }
}

/// Writes `timeline.csv`, `completions.json`, `ledger.json` and
/// `reports.json` into `dir`, creating it if needed.
pub fn write_outputs(
    dir: impl AsRef<FsPath>,
    out: &SimOutput,
    accounting: AccountingConfig,
) -> Result<ReportsFile, IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IoError::SinkUnwritable {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let ledger = emit_ledger(out, accounting);
    let reports = emit_reports(&ledger, accounting);
    write(dir, "timeline.csv", |buf| emit_timeline(&out.timeline, buf))?;
    write(dir, "completions.json", json(&emit_completions(out)))?;
    write(dir, "ledger.json", json(&ledger))?;
    write(dir, "reports.json", json(&reports))?;
    Ok(reports)
}
