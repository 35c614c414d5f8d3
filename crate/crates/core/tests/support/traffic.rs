//! Random inline scenarios on a six-node topology: four sites, two routers,
//! one shared 10 Gb/s segment.

#![allow(dead_code)]

use proptest::prelude::*;
use serde_json::{json, Value};

pub const SITES: [&str; 4] = ["s1", "s2", "s3", "s4"];

pub fn topology() -> Value {
    json!({
        "format_version": 1,
        "nodes": [
            {"name": "r1", "kind": "router"},
            {"name": "r2", "kind": "router"},
            {"name": "s1", "kind": "site"},
            {"name": "s2", "kind": "site"},
            {"name": "s3", "kind": "site"},
            {"name": "s4", "kind": "site"}
        ],
        "links": [
            {"a": "r1", "b": "r2", "capacity_gbps": 10},
            {"a": "s1", "b": "r1", "capacity_gbps": 10},
            {"a": "s2", "b": "r1", "capacity_gbps": 40},
            {"a": "s3", "b": "r2", "capacity_gbps": 10},
            {"a": "s4", "b": "r2", "capacity_gbps": 40}
        ]
    })
}

#[derive(Clone, Debug)]
pub enum Item {
    Request {
        src: usize,
        off: usize,
        volume_gb: u32,
        priority: u32,
        rate: Option<u32>,
    },
    Load {
        src: usize,
        off: usize,
        cap: Option<u32>,
        volume_gb: Option<u32>,
        stop_after: u32,
    },
    Cancel(usize),
}

fn item() -> impl Strategy<Value = Item> {
    prop_oneof![
        5 => (0usize..4, 1usize..4, 0u32..300, 0u32..4, prop::option::of(1u32..10)).prop_map(
            |(src, off, volume_gb, priority, rate)| Item::Request { src, off, volume_gb, priority, rate }
        ),
        2 => (0usize..4, 1usize..4, prop::option::of(1u32..12), prop::option::of(1u32..200), 1u32..900).prop_map(
            |(src, off, cap, volume_gb, stop_after)| Item::Load { src, off, cap, volume_gb, stop_after }
        ),
        1 => (0usize..64).prop_map(Item::Cancel),
    ]
}

/// Turns items and inter-arrival gaps into trace records, sorted by time.
pub fn trace(items: &[(Item, u32)]) -> Vec<Value> {
    let mut at = 0u32;
    let mut out: Vec<(u32, usize, Value)> = Vec::new();
    let mut requests = Vec::new();
    for (k, (it, gap)) in items.iter().enumerate() {
        at += gap;
        let pair = |src: usize, off: usize| (SITES[src], SITES[(src + off) % 4]);
        match it {
            Item::Request {
                src,
                off,
                volume_gb,
                priority,
                rate,
            } => {
                let (s, d) = pair(*src, *off);
                let id = format!("r{k}");
                let mut v = json!({"at_s": at, "kind": "request", "id": id, "src": s, "dst": d,
                    "volume_gb": volume_gb, "priority": priority});
                if let Some(r) = rate {
                    v["requested_rate_gbps"] = json!(r);
                }
                out.push((at, out.len(), v));
                requests.push(id);
            }
            Item::Load {
                src,
                off,
                cap,
                volume_gb,
                stop_after,
            } => {
                let (s, d) = pair(*src, *off);
                let id = format!("l{k}");
                let mut v = json!({"at_s": at, "kind": "load_start", "id": id, "src": s, "dst": d});
                if let Some(c) = cap {
                    v["demand_cap_gbps"] = json!(c);
                }
                if let Some(g) = volume_gb {
                    v["volume_gb"] = json!(g);
                }
                out.push((at, out.len(), v));
                out.push((
                    at + stop_after,
                    out.len(),
                    json!({"at_s": at + stop_after, "kind": "load_stop", "id": id}),
                ));
            }
            Item::Cancel(i) => {
                if !requests.is_empty() {
                    let id = &requests[i % requests.len()];
                    out.push((at, out.len(), json!({"at_s": at, "kind": "cancel", "id": id})));
                }
            }
        }
    }
    out.sort_by_key(|(at, seq, _)| (*at, *seq));
    out.into_iter().map(|(_, _, v)| v).collect()
}

pub fn scenario(items: &[(Item, u32)], efficiency: Option<f64>) -> Value {
    let mut doc = json!({
        "format_version": 1,
        "topology": topology(),
        "sites": SITES.iter().map(|s| json!({"name": s, "slots": 4})).collect::<Vec<_>>(),
        "scheduler": {"reserved_fraction": 0.25, "minimum_grant_gbps": 1, "review_interval_s": 60, "setup_delay_s": 30},
        "simulation": {"measurement_interval_s": 10, "best_effort_cap_under_provision_gbps": 2, "best_effort_floor_gbps": 0.1},
        "trace": trace(items)
    });
    if let Some(e) = efficiency {
        doc["degradation"] = json!([{"a": "r1", "b": "r2", "efficiency": e}]);
    }
    doc
}

pub fn items(len: usize) -> impl Strategy<Value = Vec<(Item, u32)>> {
    prop::collection::vec((item(), 0u32..120), 1..=len)
}
