use std::cmp::Ordering;

use crate::topology::{LinkId, NodeId, Path};
use crate::units::{approx_ge, approx_le, Rate, UNBOUNDED};

use super::capacity::Capacity;
use super::policy::{Action, Policy, PolicyView, Proposal};
use super::{AdjustmentReason, PromiseId, TransferRequest};

/// Default policy: raise, then admit with squeeze.
///
/// 1. Live promises below their requested rate are raised into any free
///    headroom, highest priority first.
/// 2. Queued requests are admitted in queue order. A request short of its
///    desired rate (requested rate capped by the path budget) may shrink
///    strictly lower-priority promises on the resources it needs, never
///    below the minimum grant, lowest priority first. Nothing is shrunk
///    unless the newcomer then clears its minimum grant.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyPriority;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Resource {
    Link(LinkId),
    Site(NodeId),
}

fn resources(path: &Path) -> Vec<Resource> {
    let mut out: Vec<Resource> = path.links.iter().map(|&l| Resource::Link(l)).collect();
    out.push(Resource::Site(path.src().clone()));
    out.push(Resource::Site(path.dst().clone()));
    out
}

fn headroom(cap: &Capacity<'_>, res: &Resource) -> Rate {
    match res {
        Resource::Link(l) => cap.link_headroom(*l),
        Resource::Site(s) => cap.site_headroom(s),
    }
}

#[derive(Clone, Debug)]
struct Entry<'a> {
    promise: Option<PromiseId>,
    request: &'a TransferRequest,
    path: Path,
    original: Rate,
    rate: Rate,
    reason: Option<AdjustmentReason>,
}

impl Entry<'_> {
    /// Victim order: lowest priority first, most recently submitted first.
    fn victim_cmp(&self, other: &Self) -> Ordering {
        other.request.queue_cmp(self.request)
    }
}

impl Policy for GreedyPriority {
    fn name(&self) -> &str {
        "greedy_priority"
    }

    fn propose(&self, view: &PolicyView<'_>) -> Proposal {
        let minimum = view.config.minimum_grant;
        let mut cap = Capacity::new(view.topology, view.config, view.endpoints);
        let mut entries: Vec<Entry<'_>> = view
            .live
            .iter()
            .filter_map(|p| {
                Some(Entry {
                    promise: Some(p.id.clone()),
                    request: view.request(&p.request)?,
                    path: p.path.clone(),
                    original: p.rate,
                    rate: p.rate,
                    reason: None,
                })
            })
            .collect();

        // raise
        for e in entries.iter_mut() {
            let ceiling = e.request.requested_rate.unwrap_or(UNBOUNDED);
            let target = ceiling.min(e.rate + cap.path_headroom(&e.path));
            if !approx_le(target, e.rate) {
                cap.shift(&e.path, target - e.rate);
                e.rate = target;
                e.reason = Some(AdjustmentReason::CapacityFreed);
            }
        }

        // admit, squeezing where needed
        for &r in &view.pending {
            let Ok(path) = view.topology.shortest_path(r.src.as_str(), r.dst.as_str()) else {
                continue;
            };
            if !cap.has_slots(&path) {
                continue;
            }
            let threshold = Capacity::threshold(r, minimum);
            let desired = r.requested_rate.unwrap_or(UNBOUNDED).min(cap.path_budget(&path));
            if !(desired > 0.0) || !approx_ge(desired, threshold) {
                continue;
            }
            let wanted = resources(&path);
            let mut deficit: Vec<Rate> = wanted
                .iter()
                .map(|res| (desired - headroom(&cap, res)).max(0.0))
                .collect();

            let mut victims: Vec<usize> = (0..entries.len())
                .filter(|&i| {
                    let e = &entries[i];
                    e.request.priority < r.priority && e.rate > minimum && {
                        let theirs = resources(&e.path);
                        wanted.iter().any(|res| theirs.contains(res))
                    }
                })
                .collect();
            victims.sort_by(|&a, &b| entries[a].victim_cmp(&entries[b]));

            let mut trial = cap.clone();
            let mut cuts = Vec::new();
            for i in victims {
                if deficit.iter().all(|d| *d <= 0.0) {
                    break;
                }
                let theirs = resources(&entries[i].path);
                let need = wanted
                    .iter()
                    .zip(&deficit)
                    .filter(|(res, _)| theirs.contains(res))
                    .map(|(_, d)| *d)
                    .fold(0.0, f64::max);
                if need <= 0.0 {
                    continue;
                }
                let cut = need.min(entries[i].rate - minimum);
                trial.shift(&entries[i].path, -cut);
                for (res, d) in wanted.iter().zip(deficit.iter_mut()) {
                    if theirs.contains(res) {
                        *d = (*d - cut).max(0.0);
                    }
                }
                cuts.push((i, cut));
            }
            let rate = trial.path_headroom(&path).min(desired);
            if !(rate > 0.0 && approx_ge(rate, threshold)) {
                continue;
            }
            // cuts that bought nothing are dropped
            let plain = cap.path_headroom(&path).min(desired);
            let reason = if cuts.is_empty() || approx_ge(plain, rate) {
                cuts.clear();
                AdjustmentReason::Admission
            } else {
                cap = trial;
                AdjustmentReason::PreemptionSqueeze
            };
            let rate = cap.path_headroom(&path).min(desired);
            for (i, cut) in cuts {
                entries[i].rate -= cut;
                entries[i].reason = Some(AdjustmentReason::PreemptionSqueeze);
            }
            cap.take_slots(&path);
            cap.shift(&path, rate);
            entries.push(Entry {
                promise: None,
                request: r,
                path,
                original: 0.0,
                rate,
                reason: Some(reason),
            });
        }

        // decreases, then grants, then increases: every prefix stays feasible
        let mut decreases = Vec::new();
        let mut grants = Vec::new();
        let mut increases = Vec::new();
        for e in entries {
            let Some(reason) = e.reason else { continue };
            match e.promise {
                None => grants.push(Action::Grant {
                    request: e.request.id.clone(),
                    rate: e.rate,
                    path: e.path,
                    reason,
                }),
                Some(promise) if e.rate < e.original => decreases.push(Action::Adjust {
                    promise,
                    new_rate: e.rate,
                    reason,
                }),
                Some(promise) if e.rate > e.original => increases.push(Action::Adjust {
                    promise,
                    new_rate: e.rate,
                    reason,
                }),
                Some(_) => {}
            }
        }
        decreases.extend(grants);
        decreases.extend(increases);
        Proposal { actions: decreases }
    }
}
