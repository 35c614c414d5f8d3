//! File formats: scenario JSON, trace JSONL, timeline CSV and the
//! completions / ledger / report JSON documents.
//!
//! Every numeric field in a file carries its unit as a suffix (`_gb`,
//! `_gbps`, `_s`) and uses decimal units. Every document, and optionally the
//! first line of a trace, carries `format_version` (currently 1).

mod output;
mod scenario;
mod trace;

use thiserror::Error;

use crate::accounting::AccountingError;
use crate::endpoints::EndpointError;
use crate::flowsim::FlowSimError;
use crate::scheduler::SchedulerError;
use crate::topology::TopologyError;

pub use output::{
    emit_completions, emit_ledger, emit_reports, emit_timeline, format_number, parse_ledger, write_outputs,
    AdjustmentRecord, CompletionFileRecord, CompletionsFile, LedgerFile, LedgerFileEntry, ReportsFile, TIMELINE_HEADER,
};
pub use scenario::{
    AccountingSection, DegradationDecl, LinkFraction, Scenario, ScenarioDocument, SchedulerSection, SimulationSection,
    SiteDecl, GREEDY_PRIORITY,
};
pub use trace::{emit_trace, parse_trace, parse_trace_str, to_stimuli, TracePayload, TraceRecord};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    SinkUnwritable { path: String, message: String },
    #[error("{what}: {message}")]
    Json { what: String, message: String },
    #[error("{what}: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { what: String, found: u64 },
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: trace is not sorted by time")]
    UnsortedTrace { line: usize },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("{context}: unknown node `{name}`")]
    UnknownNode { name: String, context: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    FlowSim(#[from] FlowSimError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

fn check_version(what: &str, found: u64) -> Result<(), IoError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(IoError::UnsupportedVersion {
            what: what.to_owned(),
            found,
        })
    }
}

fn read_file(path: &std::path::Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
