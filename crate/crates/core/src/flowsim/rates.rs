use crate::topology::Topology;
use crate::units::{approx_le, to_gbps, Bytes, Rate, Seconds, BITS_PER_BYTE, UNBOUNDED};

use super::{Flow, FlowClass, FlowSimError, SimConfig};

/// Relative slack below which a link or per-flow cap counts as saturated.
const SATURATION_EPS: f64 = 1e-12;

/// Seconds until `flow` drains at its current rate; [`UNBOUNDED`] when it
/// never will.
pub fn predict_completion(flow: &Flow) -> Seconds {
    match flow.remaining {
        None => UNBOUNDED,
        Some(r) if r <= 0.0 => 0.0,
        Some(_) if flow.current_rate <= 0.0 => UNBOUNDED,
        Some(r) => drain_time(r, flow.current_rate),
    }
}

fn drain_time(remaining: Bytes, rate: Rate) -> Seconds {
    remaining * BITS_PER_BYTE / rate
}

/// Max-min fair allocation of `residual` link capacity among demands with
/// per-demand caps, by progressive filling: every unfrozen demand rises at
/// the same pace until a link it crosses saturates or it reaches its cap.
pub fn max_min_fill(residual: &[Rate], capacity: &[Rate], paths: &[&[usize]], caps: &[Rate]) -> Vec<Rate> {
    let n = paths.len();
    let mut rate = vec![0.0; n];
    let mut frozen: Vec<bool> = (0..n)
        .map(|i| caps[i] <= 0.0 || paths[i].iter().any(|&l| residual[l] <= 0.0))
        .collect();
    let mut rem = residual.to_vec();
    let mut count = vec![0usize; rem.len()];
    loop {
        count.iter_mut().for_each(|c| *c = 0);
        let mut any = false;
        for i in (0..n).filter(|&i| !frozen[i]) {
            any = true;
            for &l in paths[i] {
                count[l] += 1;
            }
        }
        if !any {
            break;
        }
        let mut step = UNBOUNDED;
        for (l, &c) in count.iter().enumerate() {
            if c > 0 {
                step = step.min(rem[l] / c as f64);
            }
        }
        for i in (0..n).filter(|&i| !frozen[i]) {
            step = step.min(caps[i] - rate[i]);
        }
        if !step.is_finite() {
            // unconstrained demand with no links; leave it at zero
            frozen.iter_mut().for_each(|f| *f = true);
            break;
        }
        let step = step.max(0.0);
        for i in (0..n).filter(|&i| !frozen[i]) {
            rate[i] += step;
        }
        for (l, &c) in count.iter().enumerate() {
            if c > 0 {
                rem[l] -= step * c as f64;
            }
        }
        let saturated: Vec<bool> = rem
            .iter()
            .zip(capacity)
            .map(|(&r, &cap)| r <= SATURATION_EPS * cap)
            .collect();
        for i in 0..n {
            if frozen[i] {
                continue;
            }
            let capped = caps[i].is_finite() && caps[i] - rate[i] <= SATURATION_EPS * caps[i];
            if capped || paths[i].iter().any(|&l| saturated[l]) {
                frozen[i] = true;
            }
        }
    }
    rate
}

/// Rates for every flow, in input order.
///
/// Provisioned flows get `min(promised, demand_cap)` scaled by their path
/// efficiency. Best-effort flows share what the provisions leave on each
/// link, max-min fairly; each is capped by its demand and, while it shares a
/// link with a provision, by `best_effort_cap_under_provision`. A max-min
/// allocation gives every flow at least `min(floor, cap)` whenever that is
/// feasible, and equal shares on a link where it is not, so the floor needs
/// no separate pass.
pub fn compute_rates(topology: &Topology, flows: &[Flow], cfg: &SimConfig) -> Result<Vec<Rate>, FlowSimError> {
    let links = topology.links();
    let capacity: Vec<Rate> = links.iter().map(|l| l.capacity).collect();
    let mut rates = vec![0.0; flows.len()];
    let mut provisioned = vec![0.0; links.len()];
    let mut under_provision = vec![false; links.len()];

    for (i, f) in flows.iter().enumerate() {
        if f.class != FlowClass::Provisioned {
            continue;
        }
        let promised = f.promised_rate.unwrap_or(0.0);
        let r = promised.min(f.demand_cap.unwrap_or(UNBOUNDED)) * f.efficiency;
        rates[i] = r;
        for l in &f.path.links {
            provisioned[l.0] += r;
            under_provision[l.0] = true;
        }
    }
    for (l, (&p, &c)) in provisioned.iter().zip(&capacity).enumerate() {
        if !approx_le(p, c) {
            let link = &links[l];
            return Err(FlowSimError::InfeasibleProvisions {
                link: format!("{}-{}", link.a, link.b),
                provisioned_gbps: to_gbps(p),
                capacity_gbps: to_gbps(c),
            });
        }
    }
    let residual: Vec<Rate> = capacity
        .iter()
        .zip(&provisioned)
        .map(|(c, p)| (c - p).max(0.0))
        .collect();

    // (flow index, link indices, cap)
    let mut demands: Vec<(usize, Vec<usize>, Rate)> = Vec::new();
    for (i, f) in flows.iter().enumerate() {
        let path: Vec<usize> = f.path.links.iter().map(|l| l.0).collect();
        match f.class {
            FlowClass::BestEffort => {
                let mut cap = f.demand_cap.unwrap_or(UNBOUNDED);
                if let Some(limit) = cfg.best_effort_cap_under_provision {
                    if path.iter().any(|&l| under_provision[l]) {
                        cap = cap.min(limit);
                    }
                }
                if path.is_empty() && !cap.is_finite() {
                    return Err(FlowSimError::InvalidFlow(format!(
                        "flow `{}` has neither links nor a demand cap",
                        f.id
                    )));
                }
                demands.push((i, path, cap));
            }
            FlowClass::Provisioned if cfg.work_conserving => {
                let extra = f.demand_cap.map_or(UNBOUNDED, |c| (c - rates[i]).max(0.0));
                demands.push((i, path, extra));
            }
            FlowClass::Provisioned => {}
        }
    }
    let paths: Vec<&[usize]> = demands.iter().map(|d| d.1.as_slice()).collect();
    let caps: Vec<Rate> = demands.iter().map(|d| d.2).collect();
    let fill = max_min_fill(&residual, &capacity, &paths, &caps);
    for ((i, _, _), r) in demands.iter().zip(fill) {
        rates[*i] += r;
    }
    Ok(rates)
}
