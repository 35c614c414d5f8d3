use crate::endpoints::Endpoints;
use crate::topology::{Path, Topology};
use crate::units::{Rate, Seconds};

use super::{AdjustmentReason, Promise, PromiseId, Scheduler, SchedulerConfig, TransferRequest};

/// Allocation policy consulted on every review.
///
/// `propose` must be a pure function of the view: the same view always
/// yields the same proposal, so reviews can be replayed.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    fn propose(&self, view: &PolicyView<'_>) -> Proposal;
}

/// Read-only snapshot handed to a policy.
pub struct PolicyView<'a> {
    pub topology: &'a Topology,
    pub endpoints: &'a Endpoints,
    pub config: &'a SchedulerConfig,
    /// Queued requests in queue order.
    pub pending: Vec<&'a TransferRequest>,
    /// Pending and active promises, highest priority first.
    pub live: Vec<&'a Promise>,
    pub now: Seconds,
    requests: &'a std::collections::BTreeMap<String, TransferRequest>,
}

impl<'a> PolicyView<'a> {
    pub(super) fn new(s: &'a Scheduler, now: Seconds) -> Self {
        let pending = s.queue.iter().map(|id| &s.requests[id]).collect();
        let mut live: Vec<&Promise> = s.live_promises().collect();
        live.sort_by(|a, b| a.priority_cmp(b));
        PolicyView {
            topology: &s.topology,
            endpoints: &s.endpoints,
            config: &s.config,
            pending,
            live,
            now,
            requests: &s.requests,
        }
    }

    pub fn request(&self, id: &str) -> Option<&'a TransferRequest> {
        self.requests.get(id)
    }
}

/// A change the policy wants made. Actions are applied in order and the
/// whole proposal is dropped if any step or the final state is invalid.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Grant {
        request: String,
        rate: Rate,
        path: Path,
        reason: AdjustmentReason,
    },
    Adjust {
        promise: PromiseId,
        new_rate: Rate,
        reason: AdjustmentReason,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Proposal {
    pub actions: Vec<Action>,
}
