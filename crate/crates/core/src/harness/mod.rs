//! Closed-loop simulation of the proposed scheme and the three benchmarks,
//! with per-slot metrics and run summaries.

mod compare;
mod offline;
mod online;
mod sweep;
mod validate;

pub use compare::{compare, compare_rows, write_compare_csv, CompareRow};
pub use offline::{plan_offline, OfflinePlan};
pub use online::{b3_bounds, linear_response};
pub use sweep::{sweep, SweepParam, SweepPoint};
pub use validate::{validate_scenario, Check, ValidationReport};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::BiddingError;
use crate::fleet::{Fleet, FleetError};
use crate::market::MarketError;
use crate::scenario::{Built, Scenario, ScenarioError};
use crate::scheduler::QueueState;
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Bidding(#[from] BiddingError),
    #[error("offline benchmark: {0}")]
    Solver(#[from] SolverError),
    #[error("offline benchmark infeasible: {0}")]
    OfflineInfeasible(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True for infeasibility of the physical problem (not bad input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            HarnessError::OfflineInfeasible(_)
                | HarnessError::Market(MarketError::Infeasible { .. })
                | HarnessError::Scenario(ScenarioError::Market(MarketError::Infeasible { .. }))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Bid curves, two-stage clearing, per-group scheduling.
    Online,
    /// Full-horizon offline optimum with perfect foresight.
    B1,
    /// Stepwise bids and greedy scheduling.
    B2,
    /// Bounds-only bids with FIFO dispatch.
    B3,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Online, Strategy::B1, Strategy::B2, Strategy::B3];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Online => "online",
            Strategy::B1 => "b1",
            Strategy::B2 => "b2",
            Strategy::B3 => "b3",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "online" | "proposed" => Ok(Strategy::Online),
            "b1" => Ok(Strategy::B1),
            "b2" => Ok(Strategy::B2),
            "b3" => Ok(Strategy::B3),
            other => Err(format!("unknown strategy `{other}` (expected online, b1, b2 or b3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Verify every clearing's KKT conditions and price formula.
    pub check_market: bool,
    /// Log solver working sets at debug level.
    pub debug_solver: bool,
}

/// One CSV row: aggregator `agg` at slot `t`, queues after the update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRow {
    pub t: usize,
    pub agg_id: usize,
    pub lmp: f64,
    pub x: f64,
    pub cost_cum: f64,
    pub q_total: f64,
    pub z_total: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub agg: usize,
    pub group: usize,
    pub parking_duration: usize,
    pub evs: usize,
    pub completed: usize,
    /// Mean over all members; unfinished EVs count with their censored delay.
    pub mean_delay: f64,
    pub max_delay: usize,
    pub delay_bound: f64,
    pub delay_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggStats {
    pub agg: usize,
    pub bus: usize,
    pub cost: f64,
    pub energy_kwh: f64,
    pub evs: usize,
    pub completed: usize,
    /// `M̃ / V` from running maxima of the queues.
    pub gap_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub horizon: usize,
    pub v: f64,
    pub total_cost: f64,
    pub total_energy_kwh: f64,
    pub unit_cost: f64,
    pub evs: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub mean_delay: f64,
    pub delay_violations: usize,
    pub gap_bound_total: f64,
    /// `|Σ_k cost_k − Σ_t Σ_k π x Δt|`.
    pub accounting_residual: f64,
    pub prop4_checks: usize,
    pub prop4_violations: usize,
    pub prop4_max_residual: f64,
    pub market_check_failures: Vec<String>,
    pub refinement_worse: usize,
    pub max_refinements: usize,
    pub aggregators: Vec<AggStats>,
    pub groups: Vec<GroupStats>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub rows: Vec<SlotRow>,
}

impl RunOutput {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// What a strategy decided for one slot.
pub(crate) struct Decision {
    pub lmps: Vec<f64>,
    /// Market allocation per aggregator (kW); payments use these.
    pub x_market: Vec<f64>,
    /// Per-EV powers per aggregator.
    pub powers: Vec<Vec<(usize, f64)>>,
}

#[derive(Default)]
pub(crate) struct Diagnostics {
    pub prop4_checks: usize,
    pub prop4_violations: usize,
    pub prop4_max_residual: f64,
    pub market_check_failures: Vec<String>,
    pub refinement_worse: usize,
    pub max_refinements: usize,
}

/// Live state of a run shared by every strategy.
pub(crate) struct Sim {
    pub built: Built,
    pub queues: Vec<QueueState>,
    /// Group of each EV, per aggregator.
    ev_group: Vec<Vec<usize>>,
    finish: Vec<Vec<Option<usize>>>,
    cost: Vec<f64>,
    energy: Vec<f64>,
    payments: f64,
    pub rows: Vec<SlotRow>,
    pub diag: Diagnostics,
}

impl Sim {
    fn new(mut built: Built) -> Self {
        built.fleets.iter_mut().for_each(Fleet::reset);
        let k = built.fleets.len();
        let groups = built.sched.groups();
        let ev_group = built
            .fleets
            .iter()
            .map(|f| {
                let mut eg = vec![0; f.evs.len()];
                for g in &f.groups {
                    for &i in &g.members {
                        eg[i] = g.group_id;
                    }
                }
                eg
            })
            .collect();
        let finish = built
            .fleets
            .iter()
            .map(|f| f.evs.iter().map(|e| e.is_complete().then_some(e.arrival_slot)).collect())
            .collect();
        Self {
            built,
            queues: vec![QueueState::new(groups); k],
            ev_group,
            finish,
            cost: vec![0.0; k],
            energy: vec![0.0; k],
            payments: 0.0,
            rows: Vec::new(),
            diag: Diagnostics::default(),
        }
    }

    /// Arrival rates and caps of every aggregator at `t`, caps recorded.
    pub fn observe(&mut self, t: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let series = self.built.exec.map(&self.built.fleets, |f| f.series(t));
        for (q, (_, caps)) in self.queues.iter_mut().zip(&series) {
            q.observe_caps(caps);
        }
        series
    }

    fn step(&mut self, t: usize, series: &[(Vec<f64>, Vec<f64>)], d: Decision) -> Result<(), HarnessError> {
        let dt = self.built.fleet_params.dt;
        let groups = self.built.sched.groups();
        for k in 0..self.built.fleets.len() {
            let mut xg = vec![0.0; groups];
            for &(i, p) in &d.powers[k] {
                xg[self.ev_group[k][i]] += p;
            }
            let fleet = &mut self.built.fleets[k];
            fleet.apply(&d.powers[k])?;
            for &(i, _) in &d.powers[k] {
                if self.finish[k][i].is_none() && fleet.evs[i].is_complete() {
                    self.finish[k][i] = Some(t);
                }
            }
            self.queues[k].advance(&xg, &series[k].0, &self.built.sched);
            let pay = d.lmps[k] * d.x_market[k] * dt;
            self.cost[k] += pay;
            self.payments += pay;
            self.energy[k] += d.x_market[k] * dt;
            self.rows.push(SlotRow {
                t,
                agg_id: k,
                lmp: d.lmps[k] + 0.0,
                x: d.x_market[k] + 0.0,
                cost_cum: self.cost[k],
                q_total: self.queues[k].q.iter().sum(),
                z_total: self.queues[k].z.iter().sum(),
                completed: self.finish[k].iter().filter(|f| f.is_some()).count(),
            });
        }
        Ok(())
    }

    fn summarize(self, scenario: &Scenario, strategy: Strategy) -> RunOutput {
        let horizon = self.built.horizon;
        let sched = &self.built.sched;
        let mut groups = Vec::new();
        let mut aggs = Vec::new();
        let mut all_delays = Vec::new();
        for (k, fleet) in self.built.fleets.iter().enumerate() {
            let q = &self.queues[k];
            for g in &fleet.groups {
                let bound = q.delay_bound(g.group_id, sched);
                let delays: Vec<usize> = g
                    .members
                    .iter()
                    .map(|&i| {
                        let ev = &fleet.evs[i];
                        match self.finish[k][i] {
                            Some(f) => (f + 1).saturating_sub(ev.arrival_slot),
                            None => ev.departure_slot.min(horizon).saturating_sub(ev.arrival_slot),
                        }
                    })
                    .collect();
                all_delays.extend(&delays);
                groups.push(GroupStats {
                    agg: k,
                    group: g.group_id,
                    parking_duration: g.parking_duration,
                    evs: g.members.len(),
                    completed: g.members.iter().filter(|&&i| self.finish[k][i].is_some()).count(),
                    mean_delay: mean(&delays),
                    max_delay: delays.iter().copied().max().unwrap_or(0),
                    delay_bound: bound,
                    delay_violations: delays.iter().filter(|&&d| d as f64 > bound + 1e-9).count(),
                });
            }
            aggs.push(AggStats {
                agg: k,
                bus: self.built.market.agg_buses[k],
                cost: self.cost[k],
                energy_kwh: self.energy[k],
                evs: fleet.evs.len(),
                completed: self.finish[k].iter().filter(|f| f.is_some()).count(),
                gap_bound: q.gap_bound(sched),
            });
        }
        let total_cost: f64 = self.cost.iter().sum();
        let total_energy: f64 = self.energy.iter().sum();
        let evs: usize = aggs.iter().map(|a| a.evs).sum();
        let completed: usize = aggs.iter().map(|a| a.completed).sum();
        let d = self.diag;
        let summary = RunSummary {
            scenario: scenario.name.clone(),
            strategy,
            seed: scenario.seed,
            horizon,
            v: sched.v,
            total_cost,
            total_energy_kwh: total_energy,
            unit_cost: if total_energy > 0.0 { total_cost / total_energy } else { 0.0 },
            evs,
            completed,
            completion_rate: if evs > 0 { completed as f64 / evs as f64 } else { 1.0 },
            mean_delay: mean(&all_delays),
            delay_violations: groups.iter().map(|g| g.delay_violations).sum(),
            gap_bound_total: aggs.iter().map(|a| a.gap_bound).sum(),
            accounting_residual: (total_cost - self.payments).abs(),
            prop4_checks: d.prop4_checks,
            prop4_violations: d.prop4_violations,
            prop4_max_residual: d.prop4_max_residual,
            market_check_failures: d.market_check_failures,
            refinement_worse: d.refinement_worse,
            max_refinements: d.max_refinements,
            aggregators: aggs,
            groups,
        };
        RunOutput { summary, rows: self.rows }
    }
}

fn mean(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// Runs one strategy over the scenario's horizon.
pub fn run(scenario: &Scenario, strategy: Strategy, opts: RunOptions) -> Result<RunOutput, HarnessError> {
    let mut built = scenario.build()?;
    built.market.options.debug = opts.debug_solver;
    let plan = match strategy {
        Strategy::B1 => Some(plan_offline(&built)?),
        _ => None,
    };
    let mut sim = Sim::new(built);
    for t in 0..sim.built.horizon {
        let series = sim.observe(t);
        let decision = match strategy {
            Strategy::Online => online::decide_online(&mut sim, t, &series, opts)?,
            Strategy::B2 => online::decide_b2(&mut sim, t, &series, opts)?,
            Strategy::B3 => online::decide_b3(&mut sim, t, &series, opts)?,
            Strategy::B1 => plan.as_ref().expect("plan built").decision(t),
        };
        sim.step(t, &series, decision)?;
    }
    Ok(sim.summarize(scenario, strategy))
}
