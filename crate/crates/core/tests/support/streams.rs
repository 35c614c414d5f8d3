//! Six-node topology and random request streams for the scheduler.

#![allow(dead_code)]

use std::sync::Arc;

use bwpromise::topology::{LinkDecl, NodeDecl, NodeKind, TopologyDocument};
use bwpromise::units::{gbps, gigabytes};
use bwpromise::{Endpoints, LinkId, PromiseState, Scheduler, SchedulerConfig, SiteSpec, Topology, TransferRequest};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const SITES: [&str; 4] = ["s1", "s2", "s3", "s4"];

/// s1, s2 on r1; s3, s4 on r2; r1-r2 is the shared 10 Gb/s segment.
pub fn six_nodes() -> Arc<Topology> {
    let node = |n: &str, kind| NodeDecl {
        name: n.into(),
        kind,
        aliases: vec![],
    };
    let link = |a: &str, b: &str, c: f64| LinkDecl {
        a: a.into(),
        b: b.into(),
        capacity_gbps: c,
    };
    Arc::new(
        Topology::from_document(&TopologyDocument {
            format_version: 1,
            description: None,
            nodes: vec![
                node("r1", NodeKind::Router),
                node("r2", NodeKind::Router),
                node("s1", NodeKind::Site),
                node("s2", NodeKind::Site),
                node("s3", NodeKind::Site),
                node("s4", NodeKind::Site),
            ],
            links: vec![
                link("r1", "r2", 10.0),
                link("s1", "r1", 10.0),
                link("s2", "r1", 40.0),
                link("s3", "r2", 10.0),
                link("s4", "r2", 40.0),
            ],
        })
        .unwrap(),
    )
}

pub fn scheduler() -> Scheduler {
    let t = six_nodes();
    let specs: Vec<SiteSpec> = SITES
        .iter()
        .map(|s| SiteSpec {
            name: (*s).into(),
            bandwidth_limit: None,
            slot_count: 4,
        })
        .collect();
    let ep = Endpoints::new(&t, &specs).unwrap();
    Scheduler::new(t, ep, SchedulerConfig::default()).unwrap()
}

#[derive(Clone, Debug)]
pub enum Op {
    Submit {
        src: usize,
        dst: usize,
        volume_gb: u32,
        priority: u32,
        rate: Option<u32>,
    },
    Review,
    Advance(u32),
    Cancel(usize),
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0usize..4, 1usize..4, 0u32..500, 0u32..4, prop::option::of(1u32..12)).prop_map(
            |(src, off, volume_gb, priority, rate)| Op::Submit { src, dst: (src + off) % 4, volume_gb, priority, rate }
        ),
        3 => Just(Op::Review),
        3 => (1u32..300).prop_map(Op::Advance),
        1 => (0usize..1000).prop_map(Op::Cancel),
    ]
}

pub fn check_budget(s: &Scheduler) -> Result<(), TestCaseError> {
    for (i, load) in s.link_promised().into_iter().enumerate() {
        let cap = s.topology().link(LinkId(i)).capacity;
        prop_assert!(load <= 0.75 * cap * (1.0 + 1e-9), "link {i}: {load} promised of {cap}");
    }
    prop_assert!(s.check_invariants().is_ok(), "{:?}", s.check_invariants());
    Ok(())
}

/// Applies a stream of operations, checking the promise budget and the
/// scheduler invariants after each one.
pub fn apply(ops: Vec<Op>) -> Result<(), TestCaseError> {
    let mut s = scheduler();
    let mut now = 0.0;
    let mut ids: Vec<String> = Vec::new();
    for (k, op) in ops.into_iter().enumerate() {
        match op {
            Op::Submit {
                src,
                dst,
                volume_gb,
                priority,
                rate,
            } => {
                let id = format!("r{k}");
                s.submit_request(TransferRequest {
                    id: id.clone(),
                    src: SITES[src].into(),
                    dst: SITES[dst].into(),
                    volume: gigabytes(volume_gb as f64),
                    priority,
                    requested_rate: rate.map(|r| gbps(r as f64)),
                    deadline: None,
                    submitted_at: now,
                })
                .unwrap();
                ids.push(id);
            }
            Op::Review => {
                s.review(now);
                s.take_instant_completions();
            }
            Op::Advance(dt) => {
                now += dt as f64;
                let live: Vec<_> = s
                    .live_promises()
                    .map(|p| (p.id.clone(), p.state, p.start, p.end, p.rate, p.remaining))
                    .collect();
                for (id, state, start, end, rate, remaining) in live {
                    if state == PromiseState::Pending && start <= now {
                        s.activate_promise(&id, now).unwrap();
                    } else if state == PromiseState::Active {
                        if end <= now {
                            s.complete_promise(&id, now).unwrap();
                        } else {
                            let moved = rate * dt as f64 / 8.0;
                            s.update_remaining(&id, (remaining - moved).max(0.0), now).unwrap();
                        }
                    }
                }
            }
            Op::Cancel(i) => {
                if !ids.is_empty() {
                    let _ = s.cancel_request(&ids[i % ids.len()], now);
                }
            }
        }
        check_budget(&s)?;
    }
    Ok(())
}
