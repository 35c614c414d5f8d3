//! Discrete-event fluid-flow simulation.
//!
//! Transfers are continuous volumes drained at piecewise-constant rates.
//! Rates only change at events; in between, every flow's remaining volume
//! falls linearly, so the next completion can be computed exactly.

mod engine;
mod rates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::{PromiseId, SchedulerError, TransferRequest};
use crate::topology::{LinkId, NodeId, Path, TopologyError};
use crate::units::{Bytes, Rate, Seconds};

pub use engine::{run, validate_trace, CompletionKind, CompletionRecord, SimOutput, TimedAdjustment};
pub use rates::{compute_rates, max_min_fill, predict_completion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowSimError {
    #[error("provisions on link {link} total {provisioned_gbps} Gb/s over its {capacity_gbps} Gb/s capacity")]
    InfeasibleProvisions {
        link: String,
        provisioned_gbps: f64,
        capacity_gbps: f64,
    },
    #[error("link {link} carries {load_gbps} Gb/s over its {capacity_gbps} Gb/s capacity")]
    ConservationViolated {
        link: String,
        load_gbps: f64,
        capacity_gbps: f64,
    },
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowClass {
    Provisioned,
    BestEffort,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Provisioned => "provisioned",
            FlowClass::BestEffort => "best_effort",
        }
    }
}

/// A live transfer.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub id: String,
    pub class: FlowClass,
    pub path: Path,
    /// `None` for open-ended background load.
    pub remaining: Option<Bytes>,
    /// Provisioned flows only.
    pub promised_rate: Option<Rate>,
    pub demand_cap: Option<Rate>,
    /// Product of the per-link efficiency factors on the path; scales
    /// provisioned rates.
    pub efficiency: f64,
    pub current_rate: Rate,
    pub promise: Option<PromiseId>,
}

impl Flow {
    pub fn src(&self) -> &NodeId {
        self.path.src()
    }

    pub fn dst(&self) -> &NodeId {
        self.path.dst()
    }
}

/// One point of a flow's rate-over-time step curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputSample {
    pub at: Seconds,
    pub flow: String,
    pub class: FlowClass,
    pub rate: Rate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// `None` disables periodic samples; rate changes are still recorded.
    pub measurement_interval: Option<Seconds>,
    pub best_effort_cap_under_provision: Option<Rate>,
    pub best_effort_floor: Rate,
    pub work_conserving: bool,
    pub horizon: Option<Seconds>,
    /// Per-link efficiency in (0, 1] applied to provisioned flows; links not
    /// listed deliver their full promised rate. Used to inject degradation.
    pub link_efficiency: BTreeMap<LinkId, f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            measurement_interval: Some(1.0),
            best_effort_cap_under_provision: None,
            best_effort_floor: 0.0,
            work_conserving: false,
            horizon: None,
            link_efficiency: BTreeMap::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), FlowSimError> {
        let bad = |m: &str| Err(FlowSimError::InvalidConfig(m.to_owned()));
        if let Some(i) = self.measurement_interval {
            if !(i > 0.0) || !i.is_finite() {
                return bad("measurement_interval must be positive");
            }
        }
        if !(self.best_effort_floor >= 0.0) || !self.best_effort_floor.is_finite() {
            return bad("best_effort_floor must be non-negative");
        }
        if let Some(cap) = self.best_effort_cap_under_provision {
            if !(cap > 0.0) {
                return bad("best_effort_cap_under_provision must be positive");
            }
            if self.best_effort_floor > cap {
                return bad("best_effort_floor exceeds best_effort_cap_under_provision");
            }
        }
        if let Some(h) = self.horizon {
            if !(h >= 0.0) || !h.is_finite() {
                return bad("horizon must be a non-negative time");
            }
        }
        if let Some((l, e)) = self.link_efficiency.iter().find(|(_, &e)| !(e > 0.0 && e <= 1.0)) {
            return Err(FlowSimError::InvalidConfig(format!(
                "efficiency {e} on link {} is outside (0, 1]",
                l.0
            )));
        }
        Ok(())
    }
}

/// Synthetic best-effort traffic between two nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSpec {
    pub id: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub demand_cap: Option<Rate>,
    /// `None` runs until stopped.
    pub volume: Option<Bytes>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stimulus {
    Request(TransferRequest),
    LoadStart(LoadSpec),
    LoadStop(String),
    Cancel(String),
}

/// External input to a run, in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedStimulus {
    pub at: Seconds,
    pub stimulus: Stimulus,
}
