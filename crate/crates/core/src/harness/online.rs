//! Per-slot decisions of the proposed scheme and the two myopic benchmarks.

use super::{Decision, HarnessError, RunOptions, Sim};
use crate::bidding::{build_bid_curve, build_linear_bid_curve, BidCurve};
use crate::fleet::{max_power, Fleet};
use crate::market::ClearingResult;
use crate::scheduler::solve_p2;

type Series = [(Vec<f64>, Vec<f64>)];

type CurveBuilder = fn(&[f64], &[f64], &[f64], f64) -> Result<BidCurve, crate::bidding::BiddingError>;

fn curves(sim: &Sim, series: &Series, build: CurveBuilder) -> Result<Vec<BidCurve>, HarnessError> {
    let v = sim.built.sched.v;
    let idx: Vec<usize> = (0..series.len()).collect();
    let out = sim.built.exec.try_map(&idx, |&k| {
        let q = &sim.queues[k];
        build(&q.q, &q.z, &series[k].1, v)
    })?;
    Ok(out)
}

fn check(sim: &mut Sim, r: &ClearingResult, opts: RunOptions) {
    sim.diag.max_refinements = sim.diag.max_refinements.max(r.refinements);
    if opts.check_market {
        if let Err(e) = sim.built.market.check_result(r) {
            sim.diag.market_check_failures.push(format!("slot {}: {e}", r.slot));
        }
    }
}

fn split_groups(fleet: &Fleet, xg: &[f64], t: usize) -> Result<Vec<(usize, f64)>, HarnessError> {
    let mut powers = Vec::new();
    for (g, &x) in xg.iter().enumerate() {
        if x > 0.0 {
            powers.extend(fleet.disaggregate(g, x, t)?);
        }
    }
    Ok(powers)
}

pub(crate) fn decide_online(
    sim: &mut Sim,
    t: usize,
    series: &Series,
    opts: RunOptions,
) -> Result<Decision, HarnessError> {
    let curves = curves(sim, series, build_bid_curve)?;
    let (p4, p5) = sim.built.market.clear(&curves, sim.built.samples, t)?;
    if p5.objective > p4.objective + 1e-8 * (1.0 + p4.objective.abs()) {
        sim.diag.refinement_worse += 1;
    }
    check(sim, &p5, opts);
    let v = sim.built.sched.v;
    let idx: Vec<usize> = (0..series.len()).collect();
    let responses = sim.built.exec.try_map(&idx, |&k| -> Result<_, HarnessError> {
        let q = &sim.queues[k];
        let caps = &series[k].1;
        let xg = solve_p2(p5.lmps[k], &q.q, &q.z, caps, v);
        let total_cap: f64 = caps.iter().sum();
        let residual = (p5.allocations[k] - xg.iter().sum::<f64>()).abs();
        let ok = residual <= 1e-4 * (1.0 + total_cap);
        Ok((split_groups(&sim.built.fleets[k], &xg, t)?, residual, ok))
    })?;
    let mut powers = Vec::with_capacity(responses.len());
    for (p, residual, ok) in responses {
        sim.diag.prop4_checks += 1;
        sim.diag.prop4_max_residual = sim.diag.prop4_max_residual.max(residual);
        if !ok {
            sim.diag.prop4_violations += 1;
        }
        powers.push(p);
    }
    Ok(Decision { lmps: p5.lmps, x_market: p5.allocations, powers })
}

/// Greedy response to a price under stepwise bids: groups whose threshold
/// `(q+z)/V` is above the price charge fully, those below idle, and groups
/// priced exactly at the margin share what the market allocated.
pub fn linear_response(price: f64, allocated: f64, q: &[f64], z: &[f64], caps: &[f64], v: f64) -> Vec<f64> {
    let tol = 1e-9 * (1.0 + price.abs());
    let mut x = vec![0.0; caps.len()];
    let mut tied = Vec::new();
    for g in 0..caps.len() {
        let w = (q[g] + z[g]) / v;
        if w <= 0.0 || caps[g] <= 0.0 {
            continue;
        }
        if w > price + tol {
            x[g] = caps[g];
        } else if w >= price - tol {
            tied.push(g);
        }
    }
    let mut left = (allocated - x.iter().sum::<f64>()).max(0.0);
    for g in tied {
        x[g] = caps[g].min(left);
        left -= x[g];
    }
    x
}

pub(crate) fn decide_b2(sim: &mut Sim, t: usize, series: &Series, opts: RunOptions) -> Result<Decision, HarnessError> {
    let curves = curves(sim, series, build_linear_bid_curve)?;
    let r = sim.built.market.clear_p3_linear(&curves, t)?;
    check(sim, &r, opts);
    let v = sim.built.sched.v;
    let idx: Vec<usize> = (0..series.len()).collect();
    let powers = sim.built.exec.try_map(&idx, |&k| {
        let q = &sim.queues[k];
        let xg = linear_response(r.lmps[k], r.allocations[k], &q.q, &q.z, &series[k].1, v);
        split_groups(&sim.built.fleets[k], &xg, t)
    })?;
    Ok(Decision { lmps: r.lmps, x_market: r.allocations, powers })
}

/// Minimum and maximum aggregate power for slot `t`. The minimum is the
/// larger of the even-spread rate and the must-charge-now rate, summed
/// over present, unfinished EVs.
pub fn b3_bounds(fleet: &Fleet, t: usize) -> (f64, f64) {
    let p = &fleet.params;
    let unit = p.eta * p.dt;
    let (mut even, mut urgent, mut hi) = (0.0, 0.0, 0.0);
    for ev in &fleet.evs {
        let cap = max_power(ev, t, p);
        if cap <= 0.0 {
            continue;
        }
        hi += cap;
        let rem = (ev.energy_target - ev.energy_now).max(0.0);
        let left = (ev.departure_slot - t) as f64;
        even += (rem / (unit * left)).min(cap);
        urgent += ((rem - unit * ev.power_cap * (left - 1.0)) / unit).clamp(0.0, cap);
    }
    (f64::max(even, urgent).min(hi), hi)
}

pub(crate) fn decide_b3(sim: &mut Sim, t: usize, _series: &Series, opts: RunOptions) -> Result<Decision, HarnessError> {
    let bounds = sim.built.exec.map(&sim.built.fleets, |f| b3_bounds(f, t));
    let r = sim.built.market.clear_p3_bounds(&bounds, t)?;
    check(sim, &r, opts);
    let powers = sim.built.fleets.iter().zip(&r.allocations).map(|(f, &x)| f.disaggregate_all(x, t)).collect();
    Ok(Decision { lmps: r.lmps, x_market: r.allocations, powers })
}
