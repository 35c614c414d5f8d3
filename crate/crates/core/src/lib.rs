//! Promise-based wide-area bandwidth scheduling and fluid-flow transfer
//! simulation.
//!
//! * [`topology`]: capacity-annotated graph and deterministic routing
//! * [`endpoints`]: site slots and the VPNs joining them
//! * [`scheduler`]: request queue, promise grants and periodic review
//! * [`flowsim`]: discrete-event fluid-flow engine
//! * [`accounting`]: achieved vs. promised reconciliation
//! * [`io`]: scenario, trace and result file formats

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod endpoints;
pub mod flowsim;
pub mod io;
pub mod scheduler;
pub mod topology;
pub mod units;

pub use accounting::{
    aggregate, integrate_samples, reconcile, reconcile_ledger, AccountingConfig, AccountingError, Grouping,
    LedgerOutcome, PromiseLedgerEntry, PromiseReport, SystematicReport,
};
pub use endpoints::{EndpointError, Endpoints, Site, SiteSpec, Vpn, VpnId, VpnState};
pub use flowsim::{
    compute_rates, predict_completion, run, CompletionKind, CompletionRecord, Flow, FlowClass, FlowSimError, LoadSpec,
    SimConfig, SimOutput, Stimulus, ThroughputSample, TimedStimulus,
};
pub use scheduler::{
    transfer_duration, AdjustmentReason, Decision, Policy, Promise, PromiseAdjustment, PromiseId, PromiseState,
    Scheduler, SchedulerConfig, SchedulerError, TransferRequest,
};
pub use topology::{Link, LinkId, NodeId, NodeKind, Path, Topology, TopologyError};
