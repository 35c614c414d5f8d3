use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use crate::accounting::{integrate_samples, LedgerOutcome, PromiseLedgerEntry};
use crate::scheduler::{CancelOutcome, PromiseAdjustment, PromiseId, PromiseState, Scheduler};
use crate::topology::{NodeId, Topology};
use crate::units::{approx_le, to_gbps, Bytes, Rate, Seconds, BITS_PER_BYTE, UNBOUNDED};

use super::{compute_rates, Flow, FlowClass, FlowSimError, SimConfig, Stimulus, ThroughputSample, TimedStimulus};

/// Kind order for events sharing a timestamp. Flow completions come first
/// (they are not queued; see [`Engine::step`]), so capacity is freed before
/// anything tries to claim it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Rank {
    SetupComplete,
    RequestArrival,
    Cancel,
    ReviewTick,
    LoadStart,
    LoadStop,
    MeasurementTick,
}

#[derive(Clone, Debug)]
enum Kind {
    Stimulus(usize),
    Setup(PromiseId),
    /// `periodic` reviews and measurement ticks alone never keep a run going.
    Review {
        periodic: bool,
    },
    Tick(u64),
}

#[derive(Debug)]
struct Event {
    at: Seconds,
    rank: Rank,
    id: String,
    seq: u64,
    kind: Kind,
}

impl Event {
    fn idle(&self) -> bool {
        matches!(self.kind, Kind::Tick(_) | Kind::Review { periodic: true })
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then(other.rank.cmp(&self.rank))
            .then_with(|| other.id.cmp(&self.id))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CompletionKind {
    Transfer,
    Load,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionRecord {
    pub id: String,
    pub kind: CompletionKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub promise: Option<PromiseId>,
    pub submitted_at: Seconds,
    /// When bytes started moving; `None` for zero-volume requests.
    pub activated_at: Option<Seconds>,
    pub completed_at: Seconds,
    pub volume: Bytes,
    pub delivered: Bytes,
    pub deadline: Option<Seconds>,
    pub met_deadline: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedAdjustment {
    pub at: Seconds,
    pub adjustment: PromiseAdjustment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    /// Sorted by (time, flow id); one sample per flow per instant.
    pub timeline: Vec<ThroughputSample>,
    pub completions: Vec<CompletionRecord>,
    pub ledger: Vec<PromiseLedgerEntry>,
    pub adjustments: Vec<TimedAdjustment>,
    /// Highest total rate seen on each link, indexed by link id.
    pub link_peak: Vec<Rate>,
    /// Requests still queued when the run stopped.
    pub unserved: Vec<String>,
    pub rejected_proposals: usize,
    pub end_time: Seconds,
}

struct FlowMeta {
    kind: CompletionKind,
    submitted_at: Seconds,
    activated_at: Seconds,
    volume: Option<Bytes>,
    delivered_bits: f64,
    deadline: Option<Seconds>,
}

struct LedgerAcc {
    request: String,
    start: Seconds,
    promised_bits: f64,
    route: Vec<NodeId>,
}

struct Closed {
    promise: PromiseId,
    flow: String,
    acc: LedgerAcc,
    end: Seconds,
    outcome: LedgerOutcome,
}

/// Checks a trace against the scheduler's topology and sites without running
/// it. Every trace accepted here runs without input errors.
pub fn validate_trace(scheduler: &Scheduler, trace: &[TimedStimulus], cfg: &SimConfig) -> Result<(), FlowSimError> {
    cfg.validate()?;
    let topology = scheduler.topology();
    if let Some(l) = cfg.link_efficiency.keys().find(|l| l.0 >= topology.links().len()) {
        return Err(FlowSimError::InvalidConfig(format!(
            "efficiency given for unknown link {}",
            l.0
        )));
    }
    let bad = |i: usize, m: String| Err(FlowSimError::MalformedTrace(format!("record {}: {m}", i + 1)));
    let mut last = f64::NEG_INFINITY;
    let mut requests: BTreeMap<&str, Seconds> = BTreeMap::new();
    let mut loads: BTreeMap<&str, Seconds> = BTreeMap::new();
    for (i, rec) in trace.iter().enumerate() {
        if !rec.at.is_finite() || rec.at < 0.0 {
            return bad(i, format!("time {} is not a finite non-negative number", rec.at));
        }
        if rec.at < last {
            return bad(i, "trace is not sorted by time".into());
        }
        last = rec.at;
        match &rec.stimulus {
            Stimulus::Request(r) => {
                r.validate()?;
                if requests.contains_key(r.id.as_str()) || loads.contains_key(r.id.as_str()) {
                    return bad(i, format!("duplicate id `{}`", r.id));
                }
                for site in [&r.src, &r.dst] {
                    if scheduler.endpoints().site(site).is_none() {
                        return bad(i, format!("`{site}` is not a declared site"));
                    }
                }
                topology.shortest_path(r.src.as_str(), r.dst.as_str())?;
                requests.insert(&r.id, rec.at);
            }
            Stimulus::LoadStart(l) => {
                if l.id.is_empty() {
                    return bad(i, "empty load id".into());
                }
                if requests.contains_key(l.id.as_str()) || loads.contains_key(l.id.as_str()) {
                    return bad(i, format!("duplicate id `{}`", l.id));
                }
                let path = topology.shortest_path(l.src.as_str(), l.dst.as_str())?;
                if path.is_identity() {
                    return bad(i, format!("load `{}` starts and ends at the same node", l.id));
                }
                if l.demand_cap.is_some_and(|c| !(c > 0.0)) {
                    return bad(i, format!("load `{}` demand cap must be positive", l.id));
                }
                if l.volume.is_some_and(|v| !(v >= 0.0) || !v.is_finite()) {
                    return bad(
                        i,
                        format!("load `{}` volume must be a finite non-negative number", l.id),
                    );
                }
                loads.insert(&l.id, rec.at);
            }
            Stimulus::LoadStop(id) => {
                if !loads.contains_key(id.as_str()) {
                    return bad(i, format!("load_stop for unknown load `{id}`"));
                }
            }
            Stimulus::Cancel(id) => {
                if !requests.contains_key(id.as_str()) {
                    return bad(i, format!("cancel for unknown request `{id}`"));
                }
            }
        }
    }
    Ok(())
}

/// Runs `trace` to exhaustion, or to `cfg.horizon` when set.
///
/// The scheduler is reviewed whenever a request arrives, a promised transfer
/// finishes or a request is cancelled, and additionally every
/// `review_interval` seconds while work remains.
pub fn run(scheduler: Scheduler, trace: &[TimedStimulus], cfg: &SimConfig) -> Result<SimOutput, FlowSimError> {
    validate_trace(&scheduler, trace, cfg)?;
    let mut engine = Engine::new(scheduler, trace, cfg);
    engine.start();
    while engine.step()? {}
    Ok(engine.finish())
}

struct Engine<'a> {
    sched: Scheduler,
    topo: Arc<Topology>,
    cfg: &'a SimConfig,
    trace: &'a [TimedStimulus],
    heap: BinaryHeap<Event>,
    seq: u64,
    real_events: usize,
    triggered_reviews: BTreeSet<u64>,
    now: Seconds,
    flows: Vec<Flow>,
    meta: BTreeMap<String, FlowMeta>,
    timeline: Vec<ThroughputSample>,
    last_sample: BTreeMap<String, usize>,
    completions: Vec<CompletionRecord>,
    open: BTreeMap<PromiseId, LedgerAcc>,
    closed: Vec<Closed>,
    adjustments: Vec<TimedAdjustment>,
    setups: BTreeSet<PromiseId>,
    link_peak: Vec<Rate>,
}

impl<'a> Engine<'a> {
    fn new(sched: Scheduler, trace: &'a [TimedStimulus], cfg: &'a SimConfig) -> Self {
        let topo = sched.topology().clone();
        let links = topo.links().len();
        Engine {
            sched,
            topo,
            cfg,
            trace,
            heap: BinaryHeap::new(),
            seq: 0,
            real_events: 0,
            triggered_reviews: BTreeSet::new(),
            now: 0.0,
            flows: Vec::new(),
            meta: BTreeMap::new(),
            timeline: Vec::new(),
            last_sample: BTreeMap::new(),
            completions: Vec::new(),
            open: BTreeMap::new(),
            closed: Vec::new(),
            adjustments: Vec::new(),
            setups: BTreeSet::new(),
            link_peak: vec![0.0; links],
        }
    }

    fn push(&mut self, at: Seconds, rank: Rank, id: String, kind: Kind) {
        if let Some(h) = self.cfg.horizon {
            if at > h {
                return;
            }
        }
        let ev = Event {
            at,
            rank,
            id,
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        if !ev.idle() {
            self.real_events += 1;
        }
        self.heap.push(ev);
    }

    fn start(&mut self) {
        for (i, rec) in self.trace.iter().enumerate() {
            let (rank, id) = match &rec.stimulus {
                Stimulus::Request(r) => (Rank::RequestArrival, r.id.clone()),
                Stimulus::LoadStart(l) => (Rank::LoadStart, l.id.clone()),
                Stimulus::LoadStop(id) => (Rank::LoadStop, id.clone()),
                Stimulus::Cancel(id) => (Rank::Cancel, id.clone()),
            };
            self.push(rec.at, rank, id, Kind::Stimulus(i));
        }
        if self.trace.is_empty() && self.cfg.horizon.is_none() {
            return;
        }
        if self.cfg.measurement_interval.is_some() {
            self.push(0.0, Rank::MeasurementTick, String::new(), Kind::Tick(0));
        }
        let interval = self.sched.config().review_interval;
        self.push(
            interval,
            Rank::ReviewTick,
            String::new(),
            Kind::Review { periodic: true },
        );
    }

    fn busy(&self) -> bool {
        self.real_events > 0
            || self.sched.live_promises().next().is_some()
            || self.flows.iter().any(|f| f.remaining.is_some())
    }

    /// Processes the next completion batch or event. Returns false once the
    /// run is over.
    fn step(&mut self) -> Result<bool, FlowSimError> {
        let next_event = self.heap.peek().map_or(UNBOUNDED, |e| e.at);
        let (next_completion, due) = self.next_completions();
        let horizon = self.cfg.horizon.unwrap_or(UNBOUNDED);

        if next_completion.is_finite() && next_completion <= next_event && next_completion <= horizon {
            self.advance(next_completion);
            self.complete(due)?;
            self.recompute()?;
            return Ok(true);
        }
        if !next_event.is_finite() {
            if horizon.is_finite() {
                self.advance(horizon);
            }
            return Ok(false);
        }
        let ev = self.heap.pop().expect("peeked");
        if ev.idle() && !self.busy() && self.cfg.horizon.is_none() {
            return Ok(false);
        }
        if !ev.idle() {
            self.real_events -= 1;
        }
        self.advance(ev.at);
        self.handle(ev)?;
        self.recompute()?;
        Ok(true)
    }

    /// Earliest completion time and the flows finishing then.
    fn next_completions(&self) -> (Seconds, Vec<usize>) {
        let times: Vec<Seconds> = self
            .flows
            .iter()
            .map(|f| match f.remaining {
                Some(r) if r <= 0.0 => self.now,
                Some(r) if f.current_rate > 0.0 => self.now + r * BITS_PER_BYTE / f.current_rate,
                _ => UNBOUNDED,
            })
            .collect();
        let first = times.iter().copied().fold(UNBOUNDED, f64::min);
        if !first.is_finite() {
            return (UNBOUNDED, Vec::new());
        }
        let slack = 1e-12 * first.abs().max(1.0);
        let due = (0..times.len()).filter(|&i| times[i] <= first + slack).collect();
        (first, due)
    }

    fn advance(&mut self, to: Seconds) {
        let dt = to - self.now;
        if dt > 0.0 {
            for f in &mut self.flows {
                let bits = f.current_rate * dt;
                if let Some(r) = f.remaining.as_mut() {
                    *r = (*r - bits / BITS_PER_BYTE).max(0.0);
                }
                if let Some(m) = self.meta.get_mut(&f.id) {
                    m.delivered_bits += bits;
                }
                if let Some(acc) = f.promise.as_ref().and_then(|p| self.open.get_mut(p)) {
                    acc.promised_bits += f.promised_rate.unwrap_or(0.0) * dt;
                }
            }
        }
        self.now = self.now.max(to);
    }

    fn complete(&mut self, due: Vec<usize>) -> Result<(), FlowSimError> {
        let ids: Vec<String> = due.iter().map(|&i| self.flows[i].id.clone()).collect();
        let mut freed = false;
        for id in ids {
            let flow = self.remove_flow(&id).expect("due flow exists");
            let meta = self.meta.remove(&id).expect("flow metadata");
            if let Some(pid) = &flow.promise {
                self.sched.complete_promise(pid, self.now)?;
                self.close_ledger(pid, &flow.id, LedgerOutcome::Completed);
                freed = true;
            }
            let volume = meta.volume.unwrap_or(0.0);
            self.completions.push(CompletionRecord {
                id: flow.id.clone(),
                kind: meta.kind,
                src: flow.src().clone(),
                dst: flow.dst().clone(),
                promise: flow.promise.clone(),
                submitted_at: meta.submitted_at,
                activated_at: Some(meta.activated_at),
                completed_at: self.now,
                volume,
                delivered: meta.delivered_bits / BITS_PER_BYTE,
                deadline: meta.deadline,
                met_deadline: meta.deadline.map(|d| approx_le(self.now, d)),
            });
        }
        if freed {
            self.trigger_review();
        }
        Ok(())
    }

    fn handle(&mut self, ev: Event) -> Result<(), FlowSimError> {
        match ev.kind {
            Kind::Stimulus(i) => self.stimulus(i),
            Kind::Setup(pid) => self.setup(&pid),
            Kind::Review { periodic } => {
                if periodic {
                    let interval = self.sched.config().review_interval;
                    self.push(
                        ev.at + interval,
                        Rank::ReviewTick,
                        String::new(),
                        Kind::Review { periodic: true },
                    );
                } else {
                    self.triggered_reviews.remove(&ev.at.to_bits());
                }
                self.review()
            }
            Kind::Tick(k) => {
                for i in 0..self.flows.len() {
                    self.sample(i, true);
                }
                let interval = self.cfg.measurement_interval.expect("ticks need an interval");
                self.push(
                    (k + 1) as f64 * interval,
                    Rank::MeasurementTick,
                    String::new(),
                    Kind::Tick(k + 1),
                );
                Ok(())
            }
        }
    }

    fn stimulus(&mut self, i: usize) -> Result<(), FlowSimError> {
        let at = self.trace[i].at;
        match &self.trace[i].stimulus {
            Stimulus::Request(r) => {
                let mut r = r.clone();
                r.submitted_at = at;
                self.sched.submit_request(r)?;
                self.trigger_review();
            }
            Stimulus::Cancel(id) => {
                let queued = self.sched.pending().iter().any(|q| q == id);
                let live = self.sched.promise_for_request(id).is_some_and(|p| p.is_live());
                if !queued && !live {
                    log::debug!("cancel for finished or cancelled request `{id}` ignored");
                    return Ok(());
                }
                if let CancelOutcome::PromiseCancelled(pid) = self.sched.cancel_request(id, self.now)? {
                    if self.remove_flow(id).is_some() {
                        self.meta.remove(id);
                        self.close_ledger(&pid, id, LedgerOutcome::Cancelled);
                    }
                }
                self.trigger_review();
            }
            Stimulus::LoadStart(l) => {
                let path = self.topo.shortest_path(l.src.as_str(), l.dst.as_str())?;
                self.meta.insert(
                    l.id.clone(),
                    FlowMeta {
                        kind: CompletionKind::Load,
                        submitted_at: at,
                        activated_at: at,
                        volume: l.volume,
                        delivered_bits: 0.0,
                        deadline: None,
                    },
                );
                self.insert_flow(Flow {
                    id: l.id.clone(),
                    class: FlowClass::BestEffort,
                    path,
                    remaining: l.volume,
                    promised_rate: None,
                    demand_cap: l.demand_cap,
                    efficiency: 1.0,
                    current_rate: 0.0,
                    promise: None,
                });
            }
            Stimulus::LoadStop(id) => {
                if self.remove_flow(id).is_some() {
                    self.meta.remove(id);
                }
            }
        }
        Ok(())
    }

    fn trigger_review(&mut self) {
        if self.triggered_reviews.insert(self.now.to_bits()) {
            self.push(
                self.now,
                Rank::ReviewTick,
                String::new(),
                Kind::Review { periodic: false },
            );
        }
    }

    fn review(&mut self) -> Result<(), FlowSimError> {
        for f in &self.flows {
            if let Some(pid) = &f.promise {
                self.sched.update_remaining(pid, f.remaining.unwrap_or(0.0), self.now)?;
            }
        }
        let adjustments = self.sched.review(self.now);
        for adj in adjustments {
            let p = self.sched.promise(&adj.promise).expect("adjusted promise exists");
            if p.state == PromiseState::Pending && !self.setups.contains(&p.id) {
                let (start, id) = (p.start, p.id.clone());
                self.setups.insert(id.clone());
                self.push(start, Rank::SetupComplete, id.0.clone(), Kind::Setup(id));
            } else if let Some(f) = self.flows.iter_mut().find(|f| f.promise.as_ref() == Some(&adj.promise)) {
                f.promised_rate = Some(adj.new_rate);
            }
            self.adjustments.push(TimedAdjustment {
                at: self.now,
                adjustment: adj,
            });
        }
        for id in self.sched.take_instant_completions() {
            let r = self.sched.request(&id).expect("instant request exists");
            self.completions.push(CompletionRecord {
                id: id.clone(),
                kind: CompletionKind::Transfer,
                src: r.src.clone(),
                dst: r.dst.clone(),
                promise: None,
                submitted_at: r.submitted_at,
                activated_at: None,
                completed_at: self.now,
                volume: 0.0,
                delivered: 0.0,
                deadline: r.deadline,
                met_deadline: r.deadline.map(|d| approx_le(self.now, d)),
            });
        }
        Ok(())
    }

    fn setup(&mut self, pid: &PromiseId) -> Result<(), FlowSimError> {
        match self.sched.promise(pid) {
            Some(p) if p.state == PromiseState::Pending => {}
            _ => return Ok(()),
        }
        let p = self.sched.activate_promise(pid, self.now)?.clone();
        let request = self.sched.request(&p.request).expect("promise request").clone();
        let efficiency = p
            .path
            .links
            .iter()
            .map(|l| self.cfg.link_efficiency.get(l).copied().unwrap_or(1.0))
            .product();
        self.open.insert(
            pid.clone(),
            LedgerAcc {
                request: p.request.clone(),
                start: self.now,
                promised_bits: 0.0,
                route: p.path.hops.clone(),
            },
        );
        self.meta.insert(
            request.id.clone(),
            FlowMeta {
                kind: CompletionKind::Transfer,
                submitted_at: request.submitted_at,
                activated_at: self.now,
                volume: Some(request.volume),
                delivered_bits: 0.0,
                deadline: request.deadline,
            },
        );
        self.insert_flow(Flow {
            id: request.id.clone(),
            class: FlowClass::Provisioned,
            path: p.path.clone(),
            remaining: Some(p.remaining),
            promised_rate: Some(p.rate),
            demand_cap: None,
            efficiency,
            current_rate: 0.0,
            promise: Some(pid.clone()),
        });
        Ok(())
    }

    fn insert_flow(&mut self, flow: Flow) {
        let pos = self.flows.partition_point(|f| f.id < flow.id);
        self.flows.insert(pos, flow);
    }

    /// Removes a flow and records its drop to zero.
    fn remove_flow(&mut self, id: &str) -> Option<Flow> {
        let pos = self.flows.iter().position(|f| f.id == id)?;
        let mut flow = self.flows.remove(pos);
        flow.current_rate = 0.0;
        self.record(&flow, true);
        Some(flow)
    }

    fn close_ledger(&mut self, pid: &PromiseId, flow: &str, outcome: LedgerOutcome) {
        if let Some(acc) = self.open.remove(pid) {
            self.closed.push(Closed {
                promise: pid.clone(),
                flow: flow.to_owned(),
                acc,
                end: self.now,
                outcome,
            });
        }
    }

    fn recompute(&mut self) -> Result<(), FlowSimError> {
        let rates = compute_rates(&self.topo, &self.flows, self.cfg)?;
        let mut load = vec![0.0; self.link_peak.len()];
        for (f, r) in self.flows.iter_mut().zip(rates) {
            f.current_rate = r;
            for l in &f.path.links {
                load[l.0] += r;
            }
        }
        for (i, &l) in load.iter().enumerate() {
            let link = self.topo.link(crate::topology::LinkId(i));
            if !approx_le(l, link.capacity) {
                return Err(FlowSimError::ConservationViolated {
                    link: format!("{}-{}", link.a, link.b),
                    load_gbps: to_gbps(l),
                    capacity_gbps: to_gbps(link.capacity),
                });
            }
            self.link_peak[i] = self.link_peak[i].max(l);
        }
        for i in 0..self.flows.len() {
            self.sample(i, false);
        }
        Ok(())
    }

    fn sample(&mut self, i: usize, force: bool) {
        let flow = self.flows[i].clone();
        self.record(&flow, force);
    }

    fn record(&mut self, flow: &Flow, force: bool) {
        if let Some(&j) = self.last_sample.get(&flow.id) {
            let last = &mut self.timeline[j];
            if last.at == self.now {
                last.rate = flow.current_rate;
                return;
            }
            if !force && last.rate == flow.current_rate {
                return;
            }
        }
        self.last_sample.insert(flow.id.clone(), self.timeline.len());
        self.timeline.push(ThroughputSample {
            at: self.now,
            flow: flow.id.clone(),
            class: flow.class,
            rate: flow.current_rate,
        });
    }

    fn finish(mut self) -> SimOutput {
        let end = self.now;
        let still_open: Vec<(PromiseId, String)> = self
            .flows
            .iter()
            .filter_map(|f| f.promise.clone().map(|p| (p, f.id.clone())))
            .collect();
        for (pid, flow) in still_open {
            self.close_ledger(&pid, &flow, LedgerOutcome::Open);
        }
        self.timeline
            .sort_by(|a, b| a.at.total_cmp(&b.at).then_with(|| a.flow.cmp(&b.flow)));

        let mut by_flow: BTreeMap<&str, Vec<ThroughputSample>> = BTreeMap::new();
        for s in &self.timeline {
            by_flow.entry(s.flow.as_str()).or_default().push(s.clone());
        }
        let mut ledger: Vec<PromiseLedgerEntry> = self
            .closed
            .iter()
            .map(|c| {
                let samples = by_flow.get(c.flow.as_str()).map_or(&[][..], |v| v.as_slice());
                let achieved = integrate_samples(samples, c.acc.start, c.end).expect("timeline is time-ordered");
                PromiseLedgerEntry {
                    promise: c.promise.clone(),
                    request: c.acc.request.clone(),
                    promised_bytes: c.acc.promised_bits / BITS_PER_BYTE,
                    achieved_bytes: achieved,
                    active_start: c.acc.start,
                    active_end: c.end,
                    route: c.acc.route.clone(),
                    outcome: c.outcome,
                }
            })
            .collect();
        ledger.sort_by(|a, b| {
            a.active_start
                .total_cmp(&b.active_start)
                .then_with(|| a.promise.cmp(&b.promise))
        });

        SimOutput {
            timeline: self.timeline,
            completions: self.completions,
            ledger,
            adjustments: self.adjustments,
            link_peak: self.link_peak,
            unserved: self.sched.pending().to_vec(),
            rejected_proposals: self.sched.rejected_proposals(),
            end_time: end,
        }
    }
}
