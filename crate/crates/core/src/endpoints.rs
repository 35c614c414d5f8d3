//! Site transfer endpoints: slot tables, bandwidth limits and the VPNs that
//! join a slot at one site to a slot at another.
//!
//! Slot 0 of every site is the free-for-all slot and is never handed out.
//! VPNs move `Constructing -> Active -> Released` (constructing may skip
//! straight to released on cancellation).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NodeId, NodeKind, Path, Topology, TopologyError};
use crate::units::{approx_le, to_gbps, Rate, Seconds};

pub const DEFAULT_SLOT_COUNT: usize = 8;
pub const FREE_FOR_ALL_SLOT: usize = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("`{0}` is not a site node")]
    NotASite(String),
    #[error("site `{site}` needs at least 2 slots, got {count}")]
    InvalidSlotCount { site: String, count: usize },
    #[error("site `{site}` bandwidth limit {limit_gbps} Gb/s is invalid (access link {access_gbps} Gb/s)")]
    InvalidBandwidthLimit {
        site: String,
        limit_gbps: f64,
        access_gbps: f64,
    },
    #[error("duplicate site declaration `{0}`")]
    DuplicateSite(String),
    #[error("no free slot at site `{0}`")]
    NoFreeSlot(String),
    #[error("rate {rate_gbps} Gb/s exceeds the limit of {limit_gbps} Gb/s")]
    RateExceedsLimit { rate_gbps: f64, limit_gbps: f64 },
    #[error("rate must be positive")]
    NonPositiveRate,
    #[error("path does not connect `{0}` and `{1}`")]
    PathMismatch(String, String),
    #[error("a VPN needs two distinct sites")]
    SameSite,
    #[error("unknown vpn {0}")]
    UnknownVpn(VpnId),
    #[error("vpn {0} already released")]
    AlreadyReleased(VpnId),
    #[error("vpn {0} is not constructing")]
    NotConstructing(VpnId),
    #[error("slot {slot} at `{site}` is not in use")]
    SlotNotInUse { site: String, slot: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VpnId(pub u64);

impl fmt::Display for VpnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vpn-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotState {
    FreeForAll,
    Free,
    InUse(Option<VpnId>),
}

#[derive(Clone, Debug)]
pub struct Site {
    pub node: NodeId,
    pub bandwidth_limit: Rate,
    slots: Vec<SlotState>,
}

impl Site {
    pub fn new(node: NodeId, bandwidth_limit: Rate, slot_count: usize) -> Result<Self, EndpointError> {
        if slot_count < 2 {
            return Err(EndpointError::InvalidSlotCount {
                site: node.to_string(),
                count: slot_count,
            });
        }
        let mut slots = vec![SlotState::Free; slot_count];
        slots[FREE_FOR_ALL_SLOT] = SlotState::FreeForAll;
        Ok(Site {
            node,
            bandwidth_limit,
            slots,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, index: usize) -> Option<SlotState> {
        self.slots.get(index).copied()
    }

    pub fn free_slots(&self) -> usize {
        self.slots.iter().filter(|s| **s == SlotState::Free).count()
    }

    /// Takes the lowest-numbered free schedulable slot.
    pub fn allocate_slot(&mut self) -> Result<usize, EndpointError> {
        let idx = self
            .slots
            .iter()
            .position(|s| *s == SlotState::Free)
            .ok_or_else(|| EndpointError::NoFreeSlot(self.node.to_string()))?;
        self.slots[idx] = SlotState::InUse(None);
        Ok(idx)
    }

    pub fn release_slot(&mut self, index: usize) -> Result<(), EndpointError> {
        match self.slots.get(index) {
            Some(SlotState::InUse(_)) => {
                self.slots[index] = SlotState::Free;
                Ok(())
            }
            _ => Err(EndpointError::SlotNotInUse {
                site: self.node.to_string(),
                slot: index,
            }),
        }
    }

    fn bind(&mut self, index: usize, vpn: VpnId) {
        debug_assert_ne!(index, FREE_FOR_ALL_SLOT);
        self.slots[index] = SlotState::InUse(Some(vpn));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotAssignment {
    pub site: NodeId,
    pub slot_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VpnState {
    Constructing,
    Active,
    Released,
}

#[derive(Clone, Debug)]
pub struct Vpn {
    pub id: VpnId,
    pub endpoints: [SlotAssignment; 2],
    pub path: Path,
    pub rate: Rate,
    pub state: VpnState,
    pub setup_complete_at: Seconds,
    pub released_at: Option<Seconds>,
}

impl Vpn {
    pub fn touches(&self, site: &NodeId) -> bool {
        self.endpoints.iter().any(|e| &e.site == site)
    }

    /// Constructing or active.
    pub fn is_live(&self) -> bool {
        self.state != VpnState::Released
    }
}

/// Declared site parameters (before validation against a topology).
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSpec {
    pub name: String,
    /// Defaults to the access-link capacity.
    pub bandwidth_limit: Option<Rate>,
    pub slot_count: usize,
}

/// The site table plus every VPN ever attached.
#[derive(Clone, Debug, Default)]
pub struct Endpoints {
    sites: BTreeMap<NodeId, Site>,
    vpns: BTreeMap<VpnId, Vpn>,
    next_vpn: u64,
}

impl Endpoints {
    /// Builds the site table; each site must be a site node of `topology`
    /// whose limit does not exceed its access link.
    pub fn new(topology: &Topology, specs: &[SiteSpec]) -> Result<Self, EndpointError> {
        let mut sites = BTreeMap::new();
        for spec in specs {
            let node = topology
                .resolve(&spec.name)
                .map_err(|_| EndpointError::UnknownSite(spec.name.clone()))?
                .clone();
            if topology.kind(node.as_str())? != NodeKind::Site {
                return Err(EndpointError::NotASite(spec.name.clone()));
            }
            let access = topology.access_capacity(node.as_str())?.unwrap_or(0.0);
            let limit = spec.bandwidth_limit.unwrap_or(access);
            if !(limit > 0.0) || !approx_le(limit, access) {
                return Err(EndpointError::InvalidBandwidthLimit {
                    site: spec.name.clone(),
                    limit_gbps: to_gbps(limit),
                    access_gbps: to_gbps(access),
                });
            }
            let site = Site::new(node.clone(), limit, spec.slot_count)?;
            if sites.insert(node, site).is_some() {
                return Err(EndpointError::DuplicateSite(spec.name.clone()));
            }
        }
        Ok(Endpoints {
            sites,
            vpns: BTreeMap::new(),
            next_vpn: 0,
        })
    }

    pub fn site(&self, node: &NodeId) -> Option<&Site> {
        self.sites.get(node)
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    pub fn vpn(&self, id: VpnId) -> Option<&Vpn> {
        self.vpns.get(&id)
    }

    pub fn vpns(&self) -> impl Iterator<Item = &Vpn> {
        self.vpns.values()
    }

    fn site_mut(&mut self, node: &NodeId) -> Result<&mut Site, EndpointError> {
        self.sites
            .get_mut(node)
            .ok_or_else(|| EndpointError::UnknownSite(node.to_string()))
    }

    /// Sum of active VPN rates at a site.
    pub fn site_committed(&self, node: &NodeId) -> Rate {
        self.vpns
            .values()
            .filter(|v| v.state == VpnState::Active && v.touches(node))
            .map(|v| v.rate)
            .sum()
    }

    /// Sum of constructing and active VPN rates at a site; what admission uses.
    pub fn site_reserved(&self, node: &NodeId) -> Rate {
        self.vpns
            .values()
            .filter(|v| v.is_live() && v.touches(node))
            .map(|v| v.rate)
            .sum()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn attach_vpn(
        &mut self,
        topology: &Topology,
        a: &NodeId,
        b: &NodeId,
        path: &Path,
        rate: Rate,
        now: Seconds,
        setup_delay: Seconds,
    ) -> Result<VpnId, EndpointError> {
        if a == b {
            return Err(EndpointError::SameSite);
        }
        if !(rate > 0.0) {
            return Err(EndpointError::NonPositiveRate);
        }
        let limit_a = self
            .site(a)
            .ok_or_else(|| EndpointError::UnknownSite(a.to_string()))?
            .bandwidth_limit;
        let limit_b = self
            .site(b)
            .ok_or_else(|| EndpointError::UnknownSite(b.to_string()))?
            .bandwidth_limit;
        if path.src() != a || path.dst() != b {
            return Err(EndpointError::PathMismatch(a.to_string(), b.to_string()));
        }
        let bottleneck = topology.path_bottleneck(path)?;
        let limit = limit_a.min(limit_b).min(bottleneck);
        if !approx_le(rate, limit) {
            return Err(EndpointError::RateExceedsLimit {
                rate_gbps: to_gbps(rate),
                limit_gbps: to_gbps(limit),
            });
        }
        for (node, site_limit) in [(a, limit_a), (b, limit_b)] {
            let headroom = site_limit - self.site_reserved(node);
            if !approx_le(rate, headroom) {
                return Err(EndpointError::RateExceedsLimit {
                    rate_gbps: to_gbps(rate),
                    limit_gbps: to_gbps(headroom.max(0.0)),
                });
            }
        }
        if self.sites[a].free_slots() == 0 {
            return Err(EndpointError::NoFreeSlot(a.to_string()));
        }
        if self.sites[b].free_slots() == 0 {
            return Err(EndpointError::NoFreeSlot(b.to_string()));
        }
        let id = VpnId(self.next_vpn);
        self.next_vpn += 1;
        let slot_a = self.site_mut(a)?.allocate_slot()?;
        let slot_b = self.site_mut(b)?.allocate_slot()?;
        self.site_mut(a)?.bind(slot_a, id);
        self.site_mut(b)?.bind(slot_b, id);
        self.vpns.insert(
            id,
            Vpn {
                id,
                endpoints: [
                    SlotAssignment {
                        site: a.clone(),
                        slot_index: slot_a,
                    },
                    SlotAssignment {
                        site: b.clone(),
                        slot_index: slot_b,
                    },
                ],
                path: path.clone(),
                rate,
                state: VpnState::Constructing,
                setup_complete_at: now + setup_delay,
                released_at: None,
            },
        );
        Ok(id)
    }

    pub fn activate(&mut self, id: VpnId) -> Result<(), EndpointError> {
        let vpn = self.vpns.get_mut(&id).ok_or(EndpointError::UnknownVpn(id))?;
        if vpn.state != VpnState::Constructing {
            return Err(EndpointError::NotConstructing(id));
        }
        vpn.state = VpnState::Active;
        Ok(())
    }

    pub fn release_vpn(&mut self, id: VpnId, now: Seconds) -> Result<&Vpn, EndpointError> {
        let vpn = self.vpns.get_mut(&id).ok_or(EndpointError::UnknownVpn(id))?;
        if vpn.state == VpnState::Released {
            return Err(EndpointError::AlreadyReleased(id));
        }
        vpn.state = VpnState::Released;
        vpn.released_at = Some(now);
        let slots = vpn.endpoints.clone();
        for s in &slots {
            self.site_mut(&s.site)?.release_slot(s.slot_index)?;
        }
        Ok(&self.vpns[&id])
    }

    /// Changes a live VPN's rate; the caller is responsible for link-level
    /// admission, this checks the per-site and per-path limits.
    pub fn set_rate(&mut self, topology: &Topology, id: VpnId, rate: Rate) -> Result<(), EndpointError> {
        if !(rate > 0.0) {
            return Err(EndpointError::NonPositiveRate);
        }
        let vpn = self.vpns.get(&id).ok_or(EndpointError::UnknownVpn(id))?;
        if vpn.state == VpnState::Released {
            return Err(EndpointError::AlreadyReleased(id));
        }
        let bottleneck = topology.path_bottleneck(&vpn.path)?;
        if !approx_le(rate, bottleneck) {
            return Err(EndpointError::RateExceedsLimit {
                rate_gbps: to_gbps(rate),
                limit_gbps: to_gbps(bottleneck),
            });
        }
        let old = vpn.rate;
        for e in &vpn.endpoints {
            let site = &self.sites[&e.site];
            let headroom = site.bandwidth_limit - self.site_reserved(&e.site) + old;
            if !approx_le(rate, headroom) {
                return Err(EndpointError::RateExceedsLimit {
                    rate_gbps: to_gbps(rate),
                    limit_gbps: to_gbps(headroom),
                });
            }
        }
        self.vpns.get_mut(&id).expect("checked above").rate = rate;
        Ok(())
    }
}
