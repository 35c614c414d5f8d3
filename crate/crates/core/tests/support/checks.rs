//! Checks recomputed from a run's timeline and the scenario's routes,
//! without going through the engine's own bookkeeping.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use bwpromise::io::{write_outputs, Scenario};
use bwpromise::{CompletionKind, LinkId, SimOutput, Stimulus};

/// Links used by every request and load in the scenario, keyed by id.
pub fn flow_links(s: &Scenario) -> BTreeMap<String, Vec<LinkId>> {
    let mut out = BTreeMap::new();
    for t in &s.stimuli {
        let (id, src, dst) = match &t.stimulus {
            Stimulus::Request(r) => (&r.id, &r.src, &r.dst),
            Stimulus::LoadStart(l) => (&l.id, &l.src, &l.dst),
            _ => continue,
        };
        let path = s.topology.shortest_path(src.as_str(), dst.as_str()).unwrap();
        out.insert(id.clone(), path.links);
    }
    out
}

/// Replays the timeline and checks every link at every sample time.
/// Returns the number of instants checked.
pub fn check_conservation(s: &Scenario, out: &SimOutput) -> Result<usize, String> {
    let links = flow_links(s);
    let mut current: BTreeMap<&str, f64> = BTreeMap::new();
    let mut instants = 0;
    let mut i = 0;
    while i < out.timeline.len() {
        let at = out.timeline[i].at;
        while i < out.timeline.len() && out.timeline[i].at == at {
            let x = &out.timeline[i];
            if x.rate < 0.0 {
                return Err(format!("{} has negative rate at {at}", x.flow));
            }
            current.insert(x.flow.as_str(), x.rate);
            i += 1;
        }
        let mut load = vec![0.0; s.topology.links().len()];
        for (flow, rate) in &current {
            let path = links.get(*flow).ok_or_else(|| format!("unknown flow {flow}"))?;
            for l in path {
                load[l.0] += rate;
            }
        }
        for (l, sum) in load.iter().enumerate() {
            let cap = s.topology.link(LinkId(l)).capacity;
            if *sum > cap * (1.0 + 1e-9) {
                return Err(format!("link {l} carries {sum} of {cap} at {at}"));
            }
        }
        instants += 1;
    }
    Ok(instants)
}

/// Bits carried by `flow` according to its timeline samples.
pub fn integrated_bits(out: &SimOutput, flow: &str, until: f64) -> f64 {
    let samples: Vec<_> = out.timeline.iter().filter(|x| x.flow == flow).collect();
    let mut bits = 0.0;
    for (k, x) in samples.iter().enumerate() {
        let next = samples.get(k + 1).map_or(until, |n| n.at).min(until);
        if next > x.at {
            bits += x.rate * (next - x.at);
        }
    }
    bits
}

/// Each completion's delivered volume matches its integrated rate, and a
/// finished transfer delivered exactly its volume. Returns the number of
/// completions checked.
pub fn check_volumes(out: &SimOutput, tol: f64) -> Result<usize, String> {
    let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
    for c in &out.completions {
        let bits = integrated_bits(out, &c.id, c.completed_at);
        if !close(bits, 8.0 * c.delivered) {
            return Err(format!(
                "{}: integrated {bits} bits, delivered {} bytes",
                c.id, c.delivered
            ));
        }
        if c.kind == CompletionKind::Transfer && !close(c.delivered, c.volume) {
            return Err(format!("{}: delivered {} of {} bytes", c.id, c.delivered, c.volume));
        }
    }
    Ok(out.completions.len())
}

/// Runs the scenario and returns the written files, by name.
pub fn run_to_files(s: &Scenario, dir: &FsPath) -> BTreeMap<String, Vec<u8>> {
    let out = s.run().unwrap();
    write_outputs(dir, &out, s.accounting).unwrap();
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        files.insert(
            e.file_name().to_string_lossy().into_owned(),
            std::fs::read(e.path()).unwrap(),
        );
    }
    files
}

pub fn fixture(rel: &str) -> std::path::PathBuf {
    FsPath::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}
