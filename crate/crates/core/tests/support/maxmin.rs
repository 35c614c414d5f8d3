//! Exact-arithmetic bottleneck oracle for compute_rates.
//!
//! The oracle works on rationals and uses the textbook formulation: find the
//! tightest constraint (a link's fair share of what is left, or a demand's
//! own cap), fix every demand it binds, remove them, repeat.

#![allow(dead_code, clippy::needless_range_loop)]

use bwpromise::topology::{LinkDecl, NodeDecl, NodeKind, TopologyDocument};
use bwpromise::units::gbps;
use bwpromise::{compute_rates, Flow, FlowClass, SimConfig, Topology};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Q = BigRational;

pub fn q(x: i64) -> Q {
    Q::from_integer(BigInt::from(x))
}

/// Integer Gb/s inputs, so the oracle sees exact values.
#[derive(Clone, Debug)]
pub struct Instance {
    pub caps: Vec<i64>,
    /// (first link, last link inclusive, class, promised, demand cap)
    pub flows: Vec<(usize, usize, FlowClass, i64, Option<i64>)>,
    pub cap_under_provision: Option<i64>,
    pub work_conserving: bool,
}

pub fn oracle(inst: &Instance) -> Vec<Q> {
    let nl = inst.caps.len();
    let mut left: Vec<Q> = inst.caps.iter().map(|&c| q(c)).collect();
    let mut rate = vec![Q::zero(); inst.flows.len()];
    let mut shared = vec![false; nl];
    for (i, &(a, b, class, promised, cap)) in inst.flows.iter().enumerate() {
        if class == FlowClass::Provisioned {
            let r = q(cap.map_or(promised, |c| c.min(promised)));
            for l in a..=b {
                left[l] -= &r;
                shared[l] = true;
            }
            rate[i] = r;
        }
    }
    // (flow, links, cap) with cap None meaning unlimited
    let mut active: Vec<(usize, Vec<usize>, Option<Q>)> = Vec::new();
    for (i, &(a, b, class, _, cap)) in inst.flows.iter().enumerate() {
        let links: Vec<usize> = (a..=b).collect();
        match class {
            FlowClass::BestEffort => {
                let mut c = cap.map(q);
                if let Some(u) = inst.cap_under_provision {
                    if links.iter().any(|&l| shared[l]) {
                        c = Some(c.map_or(q(u), |c| c.min(q(u))));
                    }
                }
                active.push((i, links, c));
            }
            FlowClass::Provisioned if inst.work_conserving => {
                let extra = cap.map(|c| (q(c) - &rate[i]).max(Q::zero()));
                active.push((i, links, extra));
            }
            FlowClass::Provisioned => {}
        }
    }
    let mut extra = vec![Q::zero(); inst.flows.len()];
    let mut level = Q::zero();
    while !active.is_empty() {
        // tightest constraint on the common level
        let mut best: Option<Q> = None;
        for l in 0..nl {
            let n = active.iter().filter(|d| d.1.contains(&l)).count();
            if n > 0 {
                let fixed: Q = (0..inst.flows.len())
                    .filter(|&i| !active.iter().any(|d| d.0 == i))
                    .filter(|&i| inst.flows[i].0 <= l && l <= inst.flows[i].1)
                    .map(|i| extra[i].clone())
                    .fold(Q::zero(), |s, x| s + x);
                let share = (&left[l] - fixed) / q(n as i64);
                best = Some(best.map_or(share.clone(), |b: Q| b.min(share)));
            }
        }
        for d in &active {
            if let Some(c) = &d.2 {
                best = Some(best.map_or(c.clone(), |b: Q| b.min(c.clone())));
            }
        }
        let Some(new_level) = best else { break };
        level = new_level.max(level);
        // freeze demands at their cap or on a now-full link
        let mut keep = Vec::new();
        for d in active.drain(..) {
            extra[d.0] = level.clone();
            keep.push(d);
        }
        let mut frozen = vec![false; keep.len()];
        for (k, d) in keep.iter().enumerate() {
            if d.2.as_ref().is_some_and(|c| *c <= level) {
                frozen[k] = true;
                extra[d.0] = d.2.clone().unwrap();
            }
        }
        for l in 0..nl {
            let load: Q = keep
                .iter()
                .filter(|d| d.1.contains(&l))
                .map(|d| extra[d.0].clone())
                .chain(
                    (0..inst.flows.len())
                        .filter(|&i| !keep.iter().any(|d| d.0 == i))
                        .filter(|&i| inst.flows[i].0 <= l && l <= inst.flows[i].1)
                        .map(|i| extra[i].clone()),
                )
                .fold(Q::zero(), |s, x| s + x);
            if load >= left[l] {
                for (k, d) in keep.iter().enumerate() {
                    if d.1.contains(&l) {
                        frozen[k] = true;
                    }
                }
            }
        }
        active = keep
            .into_iter()
            .zip(frozen)
            .filter(|(_, f)| !f)
            .map(|(d, _)| d)
            .collect();
    }
    rate.iter().zip(extra).map(|(r, e)| r + e).collect()
}

pub fn topology(caps: &[i64]) -> Topology {
    let names: Vec<String> = (0..=caps.len()).map(|i| format!("n{i}")).collect();
    Topology::from_document(&TopologyDocument {
        format_version: 1,
        description: None,
        nodes: names
            .iter()
            .map(|n| NodeDecl {
                name: n.clone(),
                kind: NodeKind::Router,
                aliases: vec![],
            })
            .collect(),
        links: caps
            .iter()
            .enumerate()
            .map(|(i, &c)| LinkDecl {
                a: names[i].clone(),
                b: names[i + 1].clone(),
                capacity_gbps: c as f64,
            })
            .collect(),
    })
    .unwrap()
}

pub fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=5)
        .prop_flat_map(|nl| {
            let caps = prop::collection::vec(1i64..=40, nl);
            let flow = (0..nl, 0..nl, any::<bool>(), 1i64..=8, prop::option::of(1i64..=12)).prop_map(
                |(x, y, prov, promised, cap)| {
                    let class = if prov {
                        FlowClass::Provisioned
                    } else {
                        FlowClass::BestEffort
                    };
                    (x.min(y), x.max(y), class, promised, cap)
                },
            );
            (
                caps,
                prop::collection::vec(flow, 1..=6),
                prop::option::of(1i64..=10),
                any::<bool>(),
            )
        })
        .prop_map(|(mut caps, flows, cap_under_provision, work_conserving)| {
            // keep provisions feasible: raise any link they would overrun
            for l in 0..caps.len() {
                let need: i64 = flows
                    .iter()
                    .filter(|f| f.2 == FlowClass::Provisioned && f.0 <= l && l <= f.1)
                    .map(|f| f.4.map_or(f.3, |c| c.min(f.3)))
                    .sum();
                caps[l] = caps[l].max(need);
            }
            Instance {
                caps,
                flows,
                cap_under_provision,
                work_conserving,
            }
        })
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Runs compute_rates on `inst` and compares every rate with the oracle.
pub fn check(inst: &Instance) -> Result<(), TestCaseError> {
    let t = topology(&inst.caps);
    let flows: Vec<Flow> = inst
        .flows
        .iter()
        .enumerate()
        .map(|(i, &(a, b, class, promised, cap))| Flow {
            id: format!("f{i}"),
            class,
            path: t.shortest_path(&format!("n{a}"), &format!("n{}", b + 1)).unwrap(),
            remaining: None,
            promised_rate: (class == FlowClass::Provisioned).then(|| gbps(promised as f64)),
            demand_cap: cap.map(|c| gbps(c as f64)),
            efficiency: 1.0,
            current_rate: 0.0,
            promise: None,
        })
        .collect();
    let cfg = SimConfig {
        best_effort_cap_under_provision: inst.cap_under_provision.map(|c| gbps(c as f64)),
        work_conserving: inst.work_conserving,
        ..SimConfig::default()
    };
    let got = compute_rates(&t, &flows, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let want = oracle(inst);
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        let w = gbps(w.to_f64().unwrap());
        prop_assert!(close(*g, w), "flow {i}: got {g}, oracle {w}, {inst:?}");
    }
    Ok(())
}
