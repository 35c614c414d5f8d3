use std::collections::BTreeMap;

use crate::endpoints::Endpoints;
use crate::topology::{LinkId, NodeId, Path, Topology};
use crate::units::{approx_ge, Rate, UNBOUNDED};

use super::{SchedulerConfig, TransferRequest};

/// Working copy of promised load on links and sites, used to evaluate
/// grants and rate changes before they are committed.
#[derive(Clone, Debug)]
pub(crate) struct Capacity<'a> {
    topology: &'a Topology,
    config: &'a SchedulerConfig,
    endpoints: &'a Endpoints,
    link_load: Vec<Rate>,
    site_load: BTreeMap<NodeId, Rate>,
    free_slots: BTreeMap<NodeId, usize>,
}

impl<'a> Capacity<'a> {
    pub(crate) fn new(topology: &'a Topology, config: &'a SchedulerConfig, endpoints: &'a Endpoints) -> Self {
        let mut link_load = vec![0.0; topology.links().len()];
        for vpn in endpoints.vpns().filter(|v| v.is_live()) {
            for l in &vpn.path.links {
                link_load[l.0] += vpn.rate;
            }
        }
        let site_load = endpoints
            .sites()
            .map(|s| (s.node.clone(), endpoints.site_reserved(&s.node)))
            .collect();
        let free_slots = endpoints.sites().map(|s| (s.node.clone(), s.free_slots())).collect();
        Capacity {
            topology,
            config,
            endpoints,
            link_load,
            site_load,
            free_slots,
        }
    }

    pub(crate) fn link_headroom(&self, link: LinkId) -> Rate {
        self.config.link_budget(self.topology, link) - self.link_load[link.0]
    }

    pub(crate) fn site_limit(&self, site: &NodeId) -> Rate {
        self.endpoints.site(site).map_or(0.0, |s| s.bandwidth_limit)
    }

    pub(crate) fn site_headroom(&self, site: &NodeId) -> Rate {
        self.site_limit(site) - self.site_load.get(site).copied().unwrap_or(0.0)
    }

    /// Smallest headroom over the path's links and its two end sites.
    pub(crate) fn path_headroom(&self, path: &Path) -> Rate {
        let links = path
            .links
            .iter()
            .map(|&l| self.link_headroom(l))
            .fold(UNBOUNDED, f64::min);
        links
            .min(self.site_headroom(path.src()))
            .min(self.site_headroom(path.dst()))
    }

    /// Largest promise-usable rate on the path if it were empty.
    pub(crate) fn path_budget(&self, path: &Path) -> Rate {
        let links = path
            .links
            .iter()
            .map(|&l| self.config.link_budget(self.topology, l))
            .fold(UNBOUNDED, f64::min);
        links.min(self.site_limit(path.src())).min(self.site_limit(path.dst()))
    }

    pub(crate) fn has_slots(&self, path: &Path) -> bool {
        self.free_slots.get(path.src()).copied().unwrap_or(0) > 0
            && self.free_slots.get(path.dst()).copied().unwrap_or(0) > 0
    }

    /// Adds `delta` (possibly negative) to the load of every resource on `path`.
    pub(crate) fn shift(&mut self, path: &Path, delta: Rate) {
        for l in &path.links {
            self.link_load[l.0] += delta;
        }
        for s in [path.src(), path.dst()] {
            *self.site_load.entry(s.clone()).or_insert(0.0) += delta;
        }
    }

    pub(crate) fn take_slots(&mut self, path: &Path) {
        for s in [path.src(), path.dst()] {
            if let Some(n) = self.free_slots.get_mut(s) {
                *n = n.saturating_sub(1);
            }
        }
    }

    /// Smallest rate worth granting to `request`.
    pub(crate) fn threshold(request: &TransferRequest, minimum_grant: Rate) -> Rate {
        request.requested_rate.map_or(minimum_grant, |r| r.min(minimum_grant))
    }

    /// Rate the request could be granted on `path` now, if it clears the
    /// minimum grant.
    pub(crate) fn grantable(&self, request: &TransferRequest, path: &Path, minimum_grant: Rate) -> Option<Rate> {
        if !self.has_slots(path) {
            return None;
        }
        let rate = self
            .path_headroom(path)
            .min(request.requested_rate.unwrap_or(UNBOUNDED));
        let threshold = Self::threshold(request, minimum_grant);
        (rate > 0.0 && approx_ge(rate, threshold)).then_some(rate)
    }
}
