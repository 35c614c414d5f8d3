//! Scenario documents.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "topology": "esnet.json",
//!   "sites": [{"name": "ucsd", "bandwidth_limit_gbps": 10, "slots": 8}],
//!   "scheduler": {"reserved_fraction": 0.25, "minimum_grant_gbps": 1,
//!                 "review_interval_s": 60, "setup_delay_s": 60},
//!   "simulation": {"measurement_interval_s": 1,
//!                  "best_effort_cap_under_provision_gbps": 5},
//!   "degradation": [{"a": "r1", "b": "r2", "efficiency": 0.9}],
//!   "accounting": {"deficit_threshold": 0.05, "min_samples": 5},
//!   "trace": "requests.jsonl"
//! }
//! ```
//!
//! `topology` and `trace` are either a file path, relative to the scenario
//! file, or the document inlined (a topology object / an array of trace
//! records). `sites` defaults to every site node with default limits.

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::accounting::AccountingConfig;
use crate::endpoints::{Endpoints, SiteSpec, DEFAULT_SLOT_COUNT};
use crate::flowsim::{self, SimConfig, SimOutput, TimedStimulus};
use crate::scheduler::{Scheduler, SchedulerConfig};
use crate::topology::{LinkId, NodeKind, Topology, TopologyDocument};
use crate::units::{gbps, to_gbps};

use super::trace::{parse_trace, parse_trace_values, to_stimuli, TraceRecord};
use super::{check_version, read_file, IoError};

pub const GREEDY_PRIORITY: &str = "greedy_priority";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub format_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// A path string or an inline topology document.
    pub topology: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<SiteDecl>>,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub degradation: Vec<DegradationDecl>,
    #[serde(default)]
    pub accounting: AccountingSection,
    /// A path string or an inline array of trace records.
    #[serde(default)]
    pub trace: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_limit_gbps: Option<f64>,
    #[serde(default = "default_slots")]
    pub slots: usize,
}

fn default_slots() -> usize {
    DEFAULT_SLOT_COUNT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub reserved_fraction: f64,
    pub minimum_grant_gbps: f64,
    pub review_interval_s: f64,
    pub setup_delay_s: f64,
    pub policy: String,
    pub link_reserved_fractions: Vec<LinkFraction>,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let c = SchedulerConfig::default();
        SchedulerSection {
            reserved_fraction: c.reserved_fraction,
            minimum_grant_gbps: to_gbps(c.minimum_grant),
            review_interval_s: c.review_interval,
            setup_delay_s: c.setup_delay,
            policy: GREEDY_PRIORITY.into(),
            link_reserved_fractions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFraction {
    pub a: String,
    pub b: String,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub measurement_interval_s: f64,
    pub best_effort_cap_under_provision_gbps: Option<f64>,
    pub best_effort_floor_gbps: f64,
    pub work_conserving: bool,
    pub horizon_s: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            measurement_interval_s: 1.0,
            best_effort_cap_under_provision_gbps: None,
            best_effort_floor_gbps: 0.0,
            work_conserving: false,
            horizon_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationDecl {
    pub a: String,
    pub b: String,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccountingSection {
    pub deficit_threshold: f64,
    pub min_samples: usize,
}

impl Default for AccountingSection {
    fn default() -> Self {
        let c = AccountingConfig::default();
        AccountingSection {
            deficit_threshold: c.deficit_threshold,
            min_samples: c.min_samples,
        }
    }
}

/// A fully validated scenario, ready to run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub topology: Arc<Topology>,
    pub sites: Vec<SiteSpec>,
    pub scheduler: SchedulerConfig,
    pub simulation: SimConfig,
    pub accounting: AccountingConfig,
    pub trace: Vec<TraceRecord>,
    pub stimuli: Vec<TimedStimulus>,
}

fn link_id(topology: &Topology, a: &str, b: &str, what: &str) -> Result<LinkId, IoError> {
    for n in [a, b] {
        if !topology.contains(n) {
            return Err(IoError::UnknownNode {
                name: n.to_owned(),
                context: what.to_owned(),
            });
        }
    }
    topology
        .link_between(a, b)
        .ok_or_else(|| IoError::Invalid(format!("{what}: no link between `{a}` and `{b}`")))
}

impl Scenario {
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let base = path.parent().map(FsPath::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, &base)
    }

    /// Parses and validates a scenario; relative paths resolve against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: &FsPath) -> Result<Self, IoError> {
        let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| IoError::Json {
            what: "scenario".into(),
            message: e.to_string(),
        })?;
        Self::from_document(&doc, base_dir)
    }

    pub fn from_document(doc: &ScenarioDocument, base_dir: &FsPath) -> Result<Self, IoError> {
        check_version("scenario", doc.format_version)?;
        let resolve_path = |p: &str| -> PathBuf { base_dir.join(p) };

        let topology = Arc::new(match &doc.topology {
            Value::String(p) => Topology::load(resolve_path(p))?,
            v @ Value::Object(_) => {
                let td: TopologyDocument = serde_json::from_value(v.clone()).map_err(|e| IoError::Json {
                    what: "scenario.topology".into(),
                    message: e.to_string(),
                })?;
                Topology::from_document(&td)?
            }
            _ => return Err(IoError::Invalid("scenario.topology must be a path or an object".into())),
        });

        let sites: Vec<SiteSpec> = match &doc.sites {
            Some(decls) => decls
                .iter()
                .map(|d| {
                    let node = topology.resolve(&d.name).map_err(|_| IoError::UnknownNode {
                        name: d.name.clone(),
                        context: "scenario.sites".into(),
                    })?;
                    Ok(SiteSpec {
                        name: node.to_string(),
                        bandwidth_limit: d.bandwidth_limit_gbps.map(gbps),
                        slot_count: d.slots,
                    })
                })
                .collect::<Result<_, IoError>>()?,
            None => topology
                .nodes()
                .filter(|(_, k)| *k == NodeKind::Site)
                .map(|(n, _)| SiteSpec {
                    name: n.to_string(),
                    bandwidth_limit: None,
                    slot_count: DEFAULT_SLOT_COUNT,
                })
                .collect(),
        };
        Endpoints::new(&topology, &sites)?;

        let s = &doc.scheduler;
        if s.policy != GREEDY_PRIORITY {
            return Err(IoError::Invalid(format!(
                "scheduler.policy: unknown policy `{}` (available: {GREEDY_PRIORITY})",
                s.policy
            )));
        }
        let mut link_reserved_fraction = BTreeMap::new();
        for lf in &s.link_reserved_fractions {
            let id = link_id(&topology, &lf.a, &lf.b, "scheduler.link_reserved_fractions")?;
            if link_reserved_fraction.insert(id, lf.fraction).is_some() {
                return Err(IoError::Invalid(format!(
                    "scheduler.link_reserved_fractions: link `{}`-`{}` listed twice",
                    lf.a, lf.b
                )));
            }
        }
        let scheduler = SchedulerConfig {
            reserved_fraction: s.reserved_fraction,
            link_reserved_fraction,
            minimum_grant: gbps(s.minimum_grant_gbps),
            review_interval: s.review_interval_s,
            setup_delay: s.setup_delay_s,
        };
        scheduler.validate()?;

        let m = &doc.simulation;
        let mut link_efficiency = BTreeMap::new();
        for d in &doc.degradation {
            let id = link_id(&topology, &d.a, &d.b, "degradation")?;
            if link_efficiency.insert(id, d.efficiency).is_some() {
                return Err(IoError::Invalid(format!(
                    "degradation: link `{}`-`{}` listed twice",
                    d.a, d.b
                )));
            }
        }
        let simulation = SimConfig {
            measurement_interval: Some(m.measurement_interval_s),
            best_effort_cap_under_provision: m.best_effort_cap_under_provision_gbps.map(gbps),
            best_effort_floor: gbps(m.best_effort_floor_gbps),
            work_conserving: m.work_conserving,
            horizon: m.horizon_s,
            link_efficiency,
        };
        simulation.validate()?;

        let accounting = AccountingConfig {
            deficit_threshold: doc.accounting.deficit_threshold,
            min_samples: doc.accounting.min_samples,
        };
        accounting.validate()?;

        let trace = match &doc.trace {
            Value::Null => Vec::new(),
            Value::String(p) => parse_trace(resolve_path(p))?,
            Value::Array(items) => parse_trace_values(items.clone())?,
            _ => return Err(IoError::Invalid("scenario.trace must be a path or an array".into())),
        };
        let stimuli = to_stimuli(&trace, &topology)?;

        let scenario = Scenario {
            topology,
            sites,
            scheduler,
            simulation,
            accounting,
            trace,
            stimuli,
        };
        flowsim::validate_trace(&scenario.build_scheduler()?, &scenario.stimuli, &scenario.simulation)?;
        Ok(scenario)
    }

    /// A fresh scheduler with no requests.
    pub fn build_scheduler(&self) -> Result<Scheduler, IoError> {
        let endpoints = Endpoints::new(&self.topology, &self.sites)?;
        Ok(Scheduler::new(
            self.topology.clone(),
            endpoints,
            self.scheduler.clone(),
        )?)
    }

    pub fn run(&self) -> Result<SimOutput, IoError> {
        Ok(flowsim::run(self.build_scheduler()?, &self.stimuli, &self.simulation)?)
    }
}
