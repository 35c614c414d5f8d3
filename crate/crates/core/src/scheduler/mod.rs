//! Bandwidth promise scheduler.
//!
//! Requests wait in a priority queue until a [`Policy`] grants them a
//! promise: a rate held on every link of a route, starting once the VPN is
//! built and lasting long enough to move the request's volume. Promises are
//! revisited on every review and may move up or down. Every link keeps a
//! reserved fraction of its capacity out of reach of promises so that
//! free-for-all traffic is never squeezed out entirely.

mod capacity;
mod greedy;
mod policy;

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoints::{EndpointError, Endpoints, VpnId};
use crate::topology::{LinkId, NodeId, Path, Topology, TopologyError};
use crate::units::{approx_le, gbps, to_gbps, Bytes, Rate, Seconds, BITS_PER_BYTE};

pub(crate) use capacity::Capacity;
pub use greedy::GreedyPriority;
pub use policy::{Action, Policy, PolicyView, Proposal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("duplicate request id `{0}`")]
    DuplicateRequestId(String),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("invalid request `{id}`: {reason}")]
    InvalidRequest { id: String, reason: String },
    #[error("unknown request `{0}`")]
    UnknownRequest(String),
    #[error("unknown promise `{0}`")]
    UnknownPromise(String),
    #[error("rate must be positive")]
    NonPositiveRate,
    #[error("invalid scheduler configuration: {0}")]
    InvalidConfig(String),
    #[error("promise `{id}` cannot go from {from:?} to {to:?}")]
    InvalidTransition {
        id: String,
        from: PromiseState,
        to: PromiseState,
    },
    #[error("policy proposal rejected: {0}")]
    PolicyViolation(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Seconds needed to move `volume` bytes at `rate` bits per second.
pub fn transfer_duration(volume: Bytes, rate: Rate) -> Result<Seconds, SchedulerError> {
    if !(rate > 0.0) {
        return Err(SchedulerError::NonPositiveRate);
    }
    Ok(BITS_PER_BYTE * volume / rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferRequest {
    pub id: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub volume: Bytes,
    /// Higher is more urgent.
    pub priority: u32,
    pub requested_rate: Option<Rate>,
    pub deadline: Option<Seconds>,
    pub submitted_at: Seconds,
}

impl TransferRequest {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |reason: &str| SchedulerError::InvalidRequest {
            id: self.id.clone(),
            reason: reason.to_owned(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if !(self.volume >= 0.0) || !self.volume.is_finite() {
            return Err(bad("volume must be a finite non-negative number"));
        }
        if self.src == self.dst {
            return Err(bad("source and destination are the same site"));
        }
        if let Some(r) = self.requested_rate {
            if !(r > 0.0) || !r.is_finite() {
                return Err(bad("requested rate must be positive"));
            }
        }
        if !self.submitted_at.is_finite() {
            return Err(bad("submission time must be finite"));
        }
        Ok(())
    }

    /// Queue order: priority descending, then submission time, then id.
    pub fn queue_cmp(&self, other: &Self) -> Ordering {
        (Reverse(self.priority), self.submitted_at, &self.id)
            .partial_cmp(&(Reverse(other.priority), other.submitted_at, &other.id))
            .unwrap_or(Ordering::Equal)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromiseId(pub String);

impl fmt::Display for PromiseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromiseState {
    /// Granted; the VPN is still being built.
    Pending,
    Active,
    Completed,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Promise {
    pub id: PromiseId,
    pub request: String,
    pub priority: u32,
    pub submitted_at: Seconds,
    pub rate: Rate,
    pub start: Seconds,
    pub end: Seconds,
    pub path: Path,
    pub vpn: VpnId,
    pub state: PromiseState,
    pub granted_at: Seconds,
    /// Volume still to move as of `progress_at`.
    pub remaining: Bytes,
    pub progress_at: Seconds,
    /// Set when `end` falls after the request's deadline.
    pub deadline_at_risk: bool,
}

impl Promise {
    pub fn is_live(&self) -> bool {
        matches!(self.state, PromiseState::Pending | PromiseState::Active)
    }

    pub(crate) fn priority_cmp(&self, other: &Self) -> Ordering {
        (Reverse(self.priority), self.submitted_at, &self.request)
            .partial_cmp(&(Reverse(other.priority), other.submitted_at, &other.request))
            .unwrap_or(Ordering::Equal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentReason {
    DemandChange,
    CapacityFreed,
    PreemptionSqueeze,
    /// First grant of a queued request.
    Admission,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromiseAdjustment {
    pub promise: PromiseId,
    pub request: String,
    /// Zero for a fresh grant.
    pub old_rate: Rate,
    pub new_rate: Rate,
    pub new_end: Seconds,
    pub reason: AdjustmentReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub reserved_fraction: f64,
    pub link_reserved_fraction: BTreeMap<LinkId, f64>,
    pub minimum_grant: Rate,
    pub review_interval: Seconds,
    pub setup_delay: Seconds,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            reserved_fraction: 0.25,
            link_reserved_fraction: BTreeMap::new(),
            minimum_grant: gbps(1.0),
            review_interval: 60.0,
            setup_delay: 60.0,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let fraction_ok = |f: f64| (0.0..1.0).contains(&f);
        if !fraction_ok(self.reserved_fraction) {
            return Err(SchedulerError::InvalidConfig(format!(
                "reserved_fraction {} not in [0, 1)",
                self.reserved_fraction
            )));
        }
        if let Some((l, f)) = self.link_reserved_fraction.iter().find(|(_, f)| !fraction_ok(**f)) {
            return Err(SchedulerError::InvalidConfig(format!(
                "reserved fraction {f} on link {} not in [0, 1)",
                l.0
            )));
        }
        if !(self.minimum_grant > 0.0) || !self.minimum_grant.is_finite() {
            return Err(SchedulerError::InvalidConfig("minimum_grant must be positive".into()));
        }
        if !(self.review_interval > 0.0) || !self.review_interval.is_finite() {
            return Err(SchedulerError::InvalidConfig("review_interval must be positive".into()));
        }
        if !(self.setup_delay >= 0.0) || !self.setup_delay.is_finite() {
            return Err(SchedulerError::InvalidConfig("setup_delay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn reserved_for(&self, link: LinkId) -> f64 {
        self.link_reserved_fraction
            .get(&link)
            .copied()
            .unwrap_or(self.reserved_fraction)
    }

    /// Capacity of `link` available to promises.
    pub fn link_budget(&self, topology: &Topology, link: LinkId) -> Rate {
        (1.0 - self.reserved_for(link)) * topology.link(link).capacity
    }
}

/// Outcome of [`Scheduler::compute_promise`].
#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Grant {
        rate: Rate,
        start: Seconds,
        end: Seconds,
        path: Path,
    },
    Defer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CancelOutcome {
    Dequeued,
    PromiseCancelled(PromiseId),
}

/// Scheduler state: queue, promises and the endpoint table they hold.
#[derive(Clone)]
pub struct Scheduler {
    topology: Arc<Topology>,
    endpoints: Endpoints,
    config: SchedulerConfig,
    policy: Arc<dyn Policy>,
    requests: BTreeMap<String, TransferRequest>,
    queue: Vec<String>,
    promises: BTreeMap<PromiseId, Promise>,
    by_request: BTreeMap<String, PromiseId>,
    instant: Vec<String>,
    next_promise: u64,
    rejected_proposals: usize,
}

impl fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field("policy", &self.policy.name())
            .field("queue", &self.queue)
            .field("promises", &self.promises.len())
            .finish()
    }
}

impl Scheduler {
    pub fn new(topology: Arc<Topology>, endpoints: Endpoints, config: SchedulerConfig) -> Result<Self, SchedulerError> {
        Self::with_policy(topology, endpoints, config, Arc::new(GreedyPriority))
    }

    pub fn with_policy(
        topology: Arc<Topology>,
        endpoints: Endpoints,
        config: SchedulerConfig,
        policy: Arc<dyn Policy>,
    ) -> Result<Self, SchedulerError> {
        config.validate()?;
        if let Some(l) = config
            .link_reserved_fraction
            .keys()
            .find(|l| l.0 >= topology.links().len())
        {
            return Err(SchedulerError::InvalidConfig(format!("unknown link {}", l.0)));
        }
        Ok(Scheduler {
            topology,
            endpoints,
            config,
            policy,
            requests: BTreeMap::new(),
            queue: Vec::new(),
            promises: BTreeMap::new(),
            by_request: BTreeMap::new(),
            instant: Vec::new(),
            next_promise: 0,
            rejected_proposals: 0,
        })
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn policy_name(&self) -> &str {
        self.policy.name()
    }

    pub fn request(&self, id: &str) -> Option<&TransferRequest> {
        self.requests.get(id)
    }

    /// Queued request ids in queue order.
    pub fn pending(&self) -> &[String] {
        &self.queue
    }

    pub fn promise(&self, id: &PromiseId) -> Option<&Promise> {
        self.promises.get(id)
    }

    pub fn promise_for_request(&self, request: &str) -> Option<&Promise> {
        self.by_request.get(request).and_then(|p| self.promises.get(p))
    }

    pub fn promises(&self) -> impl Iterator<Item = &Promise> {
        self.promises.values()
    }

    pub fn live_promises(&self) -> impl Iterator<Item = &Promise> {
        self.promises.values().filter(|p| p.is_live())
    }

    /// Proposals a policy returned that broke an invariant and were dropped.
    pub fn rejected_proposals(&self) -> usize {
        self.rejected_proposals
    }

    /// Zero-volume requests finished by the last review.
    pub fn take_instant_completions(&mut self) -> Vec<String> {
        std::mem::take(&mut self.instant)
    }

    pub fn submit_request(&mut self, request: TransferRequest) -> Result<(), SchedulerError> {
        request.validate()?;
        if self.requests.contains_key(&request.id) {
            return Err(SchedulerError::DuplicateRequestId(request.id));
        }
        for site in [&request.src, &request.dst] {
            if self.endpoints.site(site).is_none() {
                return Err(SchedulerError::UnknownSite(site.to_string()));
            }
        }
        let pos = self
            .queue
            .partition_point(|id| self.requests[id].queue_cmp(&request) != Ordering::Greater);
        self.queue.insert(pos, request.id.clone());
        self.requests.insert(request.id.clone(), request);
        Ok(())
    }

    /// What the default policy would grant `request` right now, without
    /// touching any state.
    pub fn compute_promise(&self, request: &str, now: Seconds) -> Result<Decision, SchedulerError> {
        if !self.queue.iter().any(|id| id == request) {
            return Err(SchedulerError::UnknownRequest(request.to_owned()));
        }
        let r = &self.requests[request];
        let path = self.topology.shortest_path(r.src.as_str(), r.dst.as_str())?;
        let cap = Capacity::new(&self.topology, &self.config, &self.endpoints);
        match cap.grantable(r, &path, self.config.minimum_grant) {
            Some(rate) => {
                let start = now + self.config.setup_delay;
                let end = start + transfer_duration(r.volume, rate)?;
                Ok(Decision::Grant { rate, start, end, path })
            }
            None => Ok(Decision::Defer),
        }
    }

    /// Runs the policy and applies its proposal atomically.
    pub fn review(&mut self, now: Seconds) -> Vec<PromiseAdjustment> {
        let zero: Vec<String> = self
            .queue
            .iter()
            .filter(|id| self.requests[*id].volume == 0.0)
            .cloned()
            .collect();
        if !zero.is_empty() {
            self.queue.retain(|id| self.requests[id].volume != 0.0);
            self.instant.extend(zero);
        }

        let proposal = {
            let view = PolicyView::new(self, now);
            self.policy.propose(&view)
        };
        if proposal.actions.is_empty() {
            return Vec::new();
        }
        let snapshot = self.clone();
        match self.apply(proposal, now) {
            Ok(adjustments) => adjustments,
            Err(err) => {
                log::warn!("policy `{}` proposal rejected at t={now}: {err}", self.policy.name());
                let rejected = self.rejected_proposals + 1;
                *self = snapshot;
                self.rejected_proposals = rejected;
                Vec::new()
            }
        }
    }

    fn apply(&mut self, proposal: Proposal, now: Seconds) -> Result<Vec<PromiseAdjustment>, SchedulerError> {
        let mut out = Vec::with_capacity(proposal.actions.len());
        for action in proposal.actions {
            match action {
                Action::Grant {
                    request,
                    rate,
                    path,
                    reason,
                } => {
                    let promise = self.grant(&request, rate, path, now)?;
                    out.push(PromiseAdjustment {
                        promise: promise.id.clone(),
                        request,
                        old_rate: 0.0,
                        new_rate: promise.rate,
                        new_end: promise.end,
                        reason,
                    });
                }
                Action::Adjust {
                    promise,
                    new_rate,
                    reason,
                } => {
                    let (old_rate, new_end, request) = self.adjust(&promise, new_rate, now)?;
                    out.push(PromiseAdjustment {
                        promise,
                        request,
                        old_rate,
                        new_rate,
                        new_end,
                        reason,
                    });
                }
            }
        }
        self.check_invariants()
            .map_err(|e| SchedulerError::PolicyViolation(e.to_string()))?;
        Ok(out)
    }

    fn grant(&mut self, request: &str, rate: Rate, path: Path, now: Seconds) -> Result<Promise, SchedulerError> {
        let pos = self
            .queue
            .iter()
            .position(|id| id == request)
            .ok_or_else(|| SchedulerError::UnknownRequest(request.to_owned()))?;
        let r = self.requests[request].clone();
        self.topology.check_path(&path)?;
        let vpn = self.endpoints.attach_vpn(
            &self.topology,
            &r.src,
            &r.dst,
            &path,
            rate,
            now,
            self.config.setup_delay,
        )?;
        let start = now + self.config.setup_delay;
        let end = start + transfer_duration(r.volume, rate)?;
        let id = PromiseId(format!("promise-{}", self.next_promise));
        self.next_promise += 1;
        let promise = Promise {
            id: id.clone(),
            request: r.id.clone(),
            priority: r.priority,
            submitted_at: r.submitted_at,
            rate,
            start,
            end,
            path,
            vpn,
            state: PromiseState::Pending,
            granted_at: now,
            remaining: r.volume,
            progress_at: now,
            deadline_at_risk: r.deadline.is_some_and(|d| end > d),
        };
        self.queue.remove(pos);
        self.by_request.insert(r.id, id.clone());
        self.promises.insert(id, promise.clone());
        Ok(promise)
    }

    fn adjust(
        &mut self,
        id: &PromiseId,
        new_rate: Rate,
        now: Seconds,
    ) -> Result<(Rate, Seconds, String), SchedulerError> {
        let p = self
            .promises
            .get(id)
            .ok_or_else(|| SchedulerError::UnknownPromise(id.to_string()))?;
        if !p.is_live() {
            return Err(SchedulerError::PolicyViolation(format!("promise {id} is not live")));
        }
        self.endpoints.set_rate(&self.topology, p.vpn, new_rate)?;
        let deadline = self.requests[&p.request].deadline;
        let p = self.promises.get_mut(id).expect("checked above");
        let old = p.rate;
        p.rate = new_rate;
        let from = match p.state {
            PromiseState::Pending => p.start,
            _ => now.max(p.progress_at),
        };
        p.end = from + transfer_duration(p.remaining, new_rate)?;
        p.deadline_at_risk = deadline.is_some_and(|d| p.end > d);
        Ok((old, p.end, p.request.clone()))
    }

    /// Marks a pending promise active once its VPN is built.
    pub fn activate_promise(&mut self, id: &PromiseId, now: Seconds) -> Result<&Promise, SchedulerError> {
        let p = self
            .promises
            .get_mut(id)
            .ok_or_else(|| SchedulerError::UnknownPromise(id.to_string()))?;
        if p.state != PromiseState::Pending {
            return Err(SchedulerError::InvalidTransition {
                id: id.to_string(),
                from: p.state,
                to: PromiseState::Active,
            });
        }
        self.endpoints.activate(p.vpn)?;
        p.state = PromiseState::Active;
        p.progress_at = now;
        // a late activation pushes the end out by the same delay
        p.end = p.end.max(now + BITS_PER_BYTE * p.remaining / p.rate);
        Ok(p)
    }

    /// Records how much of an active promise's volume is left.
    pub fn update_remaining(&mut self, id: &PromiseId, remaining: Bytes, now: Seconds) -> Result<(), SchedulerError> {
        let p = self
            .promises
            .get_mut(id)
            .ok_or_else(|| SchedulerError::UnknownPromise(id.to_string()))?;
        p.remaining = remaining.max(0.0);
        p.progress_at = now;
        // a promise running behind schedule keeps a feasible end
        if p.state == PromiseState::Active {
            p.end = p.end.max(now + BITS_PER_BYTE * p.remaining / p.rate);
        }
        Ok(())
    }

    /// Closes a promise whose transfer finished and releases its VPN.
    pub fn complete_promise(&mut self, id: &PromiseId, now: Seconds) -> Result<&Promise, SchedulerError> {
        let p = self
            .promises
            .get_mut(id)
            .ok_or_else(|| SchedulerError::UnknownPromise(id.to_string()))?;
        if p.state != PromiseState::Active {
            return Err(SchedulerError::InvalidTransition {
                id: id.to_string(),
                from: p.state,
                to: PromiseState::Completed,
            });
        }
        self.endpoints.release_vpn(p.vpn, now)?;
        p.state = PromiseState::Completed;
        p.remaining = 0.0;
        p.progress_at = now;
        Ok(p)
    }

    /// Drops a queued request, or cancels its live promise and releases the VPN.
    pub fn cancel_request(&mut self, id: &str, now: Seconds) -> Result<CancelOutcome, SchedulerError> {
        if let Some(pos) = self.queue.iter().position(|q| q == id) {
            self.queue.remove(pos);
            return Ok(CancelOutcome::Dequeued);
        }
        let pid = self
            .by_request
            .get(id)
            .filter(|pid| self.promises[*pid].is_live())
            .cloned()
            .ok_or_else(|| SchedulerError::UnknownRequest(id.to_owned()))?;
        let p = self.promises.get_mut(&pid).expect("indexed promise");
        self.endpoints.release_vpn(p.vpn, now)?;
        p.state = PromiseState::Cancelled;
        p.progress_at = now;
        Ok(CancelOutcome::PromiseCancelled(pid))
    }

    /// Sum of live promise rates on each link, indexed by link id.
    pub fn link_promised(&self) -> Vec<Rate> {
        let mut load = vec![0.0; self.topology.links().len()];
        for p in self.live_promises() {
            for l in &p.path.links {
                load[l.0] += p.rate;
            }
        }
        load
    }

    /// Checks reservation, endpoint and feasibility invariants.
    pub fn check_invariants(&self) -> Result<(), SchedulerError> {
        for (i, load) in self.link_promised().into_iter().enumerate() {
            let budget = self.config.link_budget(&self.topology, LinkId(i));
            if !approx_le(load, budget) {
                let link = self.topology.link(LinkId(i));
                return Err(SchedulerError::InvariantViolation(format!(
                    "link {}-{} promised {} Gb/s over its {} Gb/s budget",
                    link.a,
                    link.b,
                    to_gbps(load),
                    to_gbps(budget)
                )));
            }
        }
        for site in self.endpoints.sites() {
            let reserved = self.endpoints.site_reserved(&site.node);
            if !approx_le(reserved, site.bandwidth_limit) {
                return Err(SchedulerError::InvariantViolation(format!(
                    "site {} holds {} Gb/s over its {} Gb/s limit",
                    site.node,
                    to_gbps(reserved),
                    to_gbps(site.bandwidth_limit)
                )));
            }
        }
        for p in self.live_promises() {
            let vpn = self
                .endpoints
                .vpn(p.vpn)
                .ok_or_else(|| SchedulerError::InvariantViolation(format!("promise {} lost its vpn", p.id)))?;
            if vpn.rate != p.rate || !vpn.is_live() {
                return Err(SchedulerError::InvariantViolation(format!(
                    "promise {} and {} disagree",
                    p.id, p.vpn
                )));
            }
            let from = if p.state == PromiseState::Pending {
                p.start
            } else {
                p.progress_at
            };
            let needed = BITS_PER_BYTE * p.remaining;
            if !(p.rate > 0.0) || !approx_le(needed, p.rate * (p.end - from)) {
                return Err(SchedulerError::InvariantViolation(format!(
                    "promise {} cannot move its remaining volume by {}",
                    p.id, p.end
                )));
            }
        }
        Ok(())
    }
}
