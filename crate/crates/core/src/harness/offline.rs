//! Full-horizon offline optimum with perfect knowledge of every EV.

use log::debug;

use super::{Decision, HarnessError};
use crate::market::lmp;
use crate::scenario::Built;
use crate::solver::sparse::{solve_sparse, SparseQp};
use crate::solver::QpStatus;

/// Per-slot decisions of the offline optimum.
#[derive(Debug, Clone)]
pub struct OfflinePlan {
    /// `lmps[t][k]`.
    pub lmps: Vec<Vec<f64>>,
    /// `x[t][k]`: aggregator withdrawal.
    pub x: Vec<Vec<f64>>,
    /// `powers[t][k]`: per-EV powers.
    pub powers: Vec<Vec<Vec<(usize, f64)>>>,
    pub objective: f64,
    /// Largest per-EV energy correction applied after the solve (kWh).
    pub polish: f64,
}

impl OfflinePlan {
    pub(crate) fn decision(&self, t: usize) -> Decision {
        Decision { lmps: self.lmps[t].clone(), x_market: self.x[t].clone(), powers: self.powers[t].clone() }
    }
}

struct EvVars {
    agg: usize,
    ev: usize,
    start: usize,
    first_var: usize,
    slots: usize,
    cap: f64,
    need: f64,
    room: f64,
}

/// Solves the horizon-wide dispatch: every EV receives its need, or as
/// much as its window inside the horizon allows, at least total generation
/// cost subject to balance and line limits in every slot.
pub fn plan_offline(built: &Built) -> Result<OfflinePlan, HarnessError> {
    let net = &built.market.network;
    let horizon = built.horizon;
    let ng = net.generators.len();
    let nk = built.fleets.len();
    let unit = built.fleet_params.eta * built.fleet_params.dt;
    let gen_var = |t: usize, i: usize| t * ng + i;
    let x_var = |t: usize, k: usize| ng * horizon + t * nk + k;

    let mut evs = Vec::new();
    let mut n = (ng + nk) * horizon;
    for (k, f) in built.fleets.iter().enumerate() {
        for (i, ev) in f.evs.iter().enumerate() {
            let end = ev.departure_slot.min(horizon);
            if ev.arrival_slot >= end || ev.need() <= 0.0 {
                continue;
            }
            let slots = end - ev.arrival_slot;
            evs.push(EvVars {
                agg: k,
                ev: i,
                start: ev.arrival_slot,
                first_var: n,
                slots,
                cap: ev.power_cap,
                need: ev.need().min(unit * ev.power_cap * slots as f64),
                room: ev.energy_max - ev.energy_arrival,
            });
            n += slots;
        }
    }

    let mut qp = SparseQp::new(n);
    for t in 0..horizon {
        for (i, g) in net.generators.iter().enumerate() {
            let j = gen_var(t, i);
            qp.lower[j] = g.p_min;
            qp.upper[j] = g.p_max;
            if g.a > 0.0 {
                qp.quadratic.push((j, j, 2.0 * g.a));
            }
            qp.linear[j] = g.b;
            qp.constant += g.c;
        }
    }
    let mut members: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); nk]; horizon];
    for e in &evs {
        let mut energy = Vec::with_capacity(e.slots);
        for s in 0..e.slots {
            let j = e.first_var + s;
            qp.lower[j] = 0.0;
            qp.upper[j] = e.cap;
            members[e.start + s][e.agg].push((j, -1.0));
            energy.push((j, unit));
        }
        qp.add_ineq(energy.iter().map(|&(j, c)| (j, -c)).collect(), -e.need);
        qp.add_ineq(energy, e.room);
    }
    for (t, row) in members.into_iter().enumerate() {
        for (k, mut terms) in row.into_iter().enumerate() {
            terms.push((x_var(t, k), 1.0));
            qp.add_eq(terms, 0.0);
        }
    }
    let mut balance = Vec::with_capacity(horizon);
    let mut line_rows = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut bal: Vec<(usize, f64)> = (0..ng).map(|i| (gen_var(t, i), -1.0)).collect();
        bal.extend((0..nk).map(|k| (x_var(t, k), 1.0)));
        balance.push(qp.add_eq(bal, -net.load_total(t)));
        let mut rows_t = Vec::with_capacity(net.lines.len());
        for (line, row) in net.lines.iter().zip(&net.ptdf) {
            if !line.limit.is_finite() {
                rows_t.push(None);
                continue;
            }
            let mut terms: Vec<(usize, f64)> =
                net.generators.iter().enumerate().map(|(i, g)| (gen_var(t, i), row[g.bus])).collect();
            terms.extend(built.market.agg_buses.iter().enumerate().map(|(k, &b)| (x_var(t, k), -row[b])));
            let fixed: f64 = net.loads.iter().map(|d| row[d.bus] * d.at(t)).sum();
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, c)| (j, -c)).collect();
            let up = qp.add_ineq(terms, line.limit + fixed);
            let lo = qp.add_ineq(neg, line.limit - fixed);
            rows_t.push(Some((up, lo)));
        }
        line_rows.push(rows_t);
    }

    let sol = solve_sparse(&qp, 1e-9)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(HarnessError::OfflineInfeasible(diagnose(built))),
        other => return Err(HarnessError::OfflineInfeasible(format!("interior point returned {other:?}"))),
    }

    let mut powers: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); nk]; horizon];
    let mut polish: f64 = 0.0;
    for e in &evs {
        let mut p: Vec<f64> = (0..e.slots).map(|s| sol.primal[e.first_var + s].clamp(0.0, e.cap)).collect();
        polish = polish.max(polish_energy(&mut p, e, unit));
        for (s, &v) in p.iter().enumerate() {
            if v > 0.0 {
                powers[e.start + s][e.agg].push((e.ev, v));
            }
        }
    }
    let x: Vec<Vec<f64>> =
        powers.iter().map(|row| row.iter().map(|ps| ps.iter().map(|&(_, v)| v).sum()).collect()).collect();
    // Prices come from re-clearing each slot with the planned withdrawals
    // fixed; the interior-point duals are kept only if that fails.
    let lmps = (0..horizon)
        .map(|t| {
            let fixed: Vec<(f64, f64)> = x[t].iter().map(|&v| (v, v)).collect();
            if let Ok(r) = built.market.clear_p3_bounds(&fixed, t) {
                return r.lmps;
            }
            let lambda = sol.duals_eq[balance[t]];
            let dual = |pick: fn((usize, usize)) -> usize| -> Vec<f64> {
                line_rows[t].iter().map(|r| r.map_or(0.0, |r| sol.duals_ineq[pick(r)].max(0.0))).collect()
            };
            let (up, lo) = (dual(|r| r.0), dual(|r| r.1));
            built.market.agg_buses.iter().map(|&b| lmp(lambda, &lo, &up, &net.ptdf, b)).collect()
        })
        .collect();
    debug!("offline plan: {} variables, objective {:.6}, polish {:.3e} kWh", n, sol.objective, polish);
    Ok(OfflinePlan { lmps, x, powers, objective: sol.objective, polish })
}

/// Nudges an interior-point profile onto its energy window exactly:
/// tops up from the latest slots with headroom, or trims from the latest
/// charging slots. Returns the absolute correction in kWh.
fn polish_energy(p: &mut [f64], e: &EvVars, unit: f64) -> f64 {
    let delivered: f64 = p.iter().sum::<f64>() * unit;
    if delivered < e.need {
        let mut short = (e.need - delivered) / unit;
        for v in p.iter_mut().rev() {
            let add = (e.cap - *v).min(short);
            *v += add;
            short -= add;
            if short <= 0.0 {
                break;
            }
        }
        e.need - delivered
    } else if delivered > e.room {
        let mut over = (delivered - e.room) / unit;
        for v in p.iter_mut().rev() {
            let cut = v.min(over);
            *v -= cut;
            over -= cut;
            if over <= 0.0 {
                break;
            }
        }
        delivered - e.room
    } else {
        0.0
    }
}

/// Names the first slot whose fixed load alone exceeds generation limits,
/// or falls back to EV energy requirements.
fn diagnose(built: &Built) -> String {
    let net = &built.market.network;
    let gen_max = net.gen_capacity();
    let gen_min: f64 = net.generators.iter().map(|g| g.p_min).sum();
    for t in 0..built.horizon {
        let d = net.load_total(t);
        if d > gen_max || d < gen_min {
            return format!("slot {t}: fixed load {d:.3} kW outside generation range [{gen_min:.3}, {gen_max:.3}] kW");
        }
    }
    "EV energy requirements cannot be met within generation and line limits".into()
}
