//! Scenario files: network, fleets and run parameters in one JSON document,
//! plus seeded generators for the bundled and synthetic cases.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{EvTask, Fleet, FleetError, FleetParams};
use crate::market::{Generator, Line, Load, Market, MarketError, Network};
use crate::par::Exec;
use crate::scheduler::{SchedulerError, SchedulerParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub params: Params,
    pub network: NetworkSpec,
    pub aggregators: Vec<AggregatorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub eta: f64,
    /// Slot length in hours.
    pub dt_hours: f64,
    pub horizon: usize,
    pub v: f64,
    /// Parking duration `R_g` of each group, in slots.
    pub group_durations: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Extra bid samples per aggregator beyond the curve breakpoints.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub exec: Exec,
}

fn default_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub buses: usize,
    #[serde(default)]
    pub slack_bus: usize,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub lines: Vec<Line>,
    /// Shift factors given verbatim (lines x buses); computed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptdf: Option<Vec<Vec<f64>>>,
}

/// Fixed load; each series value holds for `hold` consecutive slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: usize,
    pub series: Vec<f64>,
    #[serde(default = "one")]
    pub hold: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    #[serde(default)]
    pub name: String,
    pub bus: usize,
    #[serde(default)]
    pub evs: Vec<EvTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<FleetGen>,
}

/// Random fleet: per group, a count of EVs parked exactly `R_g` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetGen {
    /// Inclusive range of EVs per group.
    pub evs_per_group: [usize; 2],
    #[serde(default = "default_capacities")]
    pub capacities_kwh: Vec<f64>,
    #[serde(default = "default_soc_arrival")]
    pub soc_arrival: [f64; 2],
    #[serde(default = "default_soc_departure")]
    pub soc_departure: f64,
    pub power_cap_kw: f64,
    /// Inclusive range of arrival slots.
    pub arrival_window: [usize; 2],
    /// Pulls each group's latest arrival in so that departures stay at or
    /// before this slot, where the window allows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latest_departure: Option<usize>,
}

fn default_capacities() -> Vec<f64> {
    vec![20.0, 50.0, 80.0]
}
fn default_soc_arrival() -> [f64; 2] {
    [0.3, 0.7]
}
fn default_soc_departure() -> f64 {
    0.8
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct Built {
    pub market: Market,
    pub fleets: Vec<Fleet>,
    pub sched: SchedulerParams,
    pub fleet_params: FleetParams,
    pub horizon: usize,
    pub samples: usize,
    pub exec: Exec,
}

impl Scenario {
    /// Parses JSON, reporting the line and column of the first problem.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Schema-level checks that do not need the network or fleets built.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let p = &self.params;
        if p.group_durations.is_empty() {
            return bad("params.group_durations is empty".into());
        }
        if p.group_durations.len() != p.alpha.len() {
            return bad(format!("params.alpha has {} entries for {} groups", p.alpha.len(), p.group_durations.len()));
        }
        if let Some((g, a)) = p.alpha.iter().enumerate().find(|(_, a)| !(**a > 0.0 && a.is_finite())) {
            return bad(format!("params.alpha[{g}] = {a} must be positive"));
        }
        if !(p.v > 0.0 && p.v.is_finite()) {
            return bad(format!("params.v = {} must be positive", p.v));
        }
        if p.samples < 1 {
            return bad("params.samples must be at least 1".into());
        }
        for (k, a) in self.aggregators.iter().enumerate() {
            if a.bus >= self.network.buses {
                return bad(format!("aggregators[{k}].bus {} is not a bus", a.bus));
            }
            if let Some(g) = &a.generate {
                if g.evs_per_group[0] > g.evs_per_group[1] || g.arrival_window[0] > g.arrival_window[1] {
                    return bad(format!("aggregators[{k}].generate has an empty range"));
                }
                if g.capacities_kwh.is_empty() || g.capacities_kwh.iter().any(|c| !(*c > 0.0)) {
                    return bad(format!("aggregators[{k}].generate.capacities_kwh must be positive"));
                }
                let [lo, hi] = g.soc_arrival;
                if !(0.0 <= lo && lo <= hi && hi < g.soc_departure && g.soc_departure <= 1.0) {
                    return bad(format!("aggregators[{k}].generate SOC levels out of order"));
                }
                if !(g.power_cap_kw > 0.0) {
                    return bad(format!("aggregators[{k}].generate.power_cap_kw must be positive"));
                }
            }
        }
        for (j, l) in self.network.loads.iter().enumerate() {
            if l.hold == 0 || l.series.is_empty() {
                return bad(format!("network.loads[{j}] needs a series and hold >= 1"));
            }
        }
        Ok(())
    }

    /// EVs of aggregator `k`: explicit records followed by generated ones.
    pub fn evs(&self, k: usize) -> Vec<EvTask> {
        let spec = &self.aggregators[k];
        let mut evs = spec.evs.clone();
        if let Some(g) = &spec.generate {
            let mut rng =
                ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
            let mut id = 1_000_000 * (k as u64 + 1);
            for &r in &self.params.group_durations {
                let n = rng.random_range(g.evs_per_group[0]..=g.evs_per_group[1]);
                let [lo, mut hi] = g.arrival_window;
                if let Some(d) = g.latest_departure {
                    hi = hi.min(d.saturating_sub(r)).max(lo);
                }
                for _ in 0..n {
                    let cap = g.capacities_kwh[rng.random_range(0..g.capacities_kwh.len())];
                    let soc = rng.random_range(g.soc_arrival[0]..=g.soc_arrival[1]);
                    let arrival = rng.random_range(lo..=hi);
                    evs.push(EvTask {
                        id,
                        arrival_slot: arrival,
                        departure_slot: arrival + r,
                        energy_arrival: soc * cap,
                        energy_target: g.soc_departure * cap,
                        energy_min: 0.0,
                        energy_max: cap,
                        power_cap: g.power_cap_kw,
                        energy_now: soc * cap,
                    });
                    id += 1;
                }
            }
        }
        evs
    }

    pub fn build(&self) -> Result<Built, ScenarioError> {
        self.validate()?;
        let p = &self.params;
        let fleet_params = FleetParams { eta: p.eta, dt: p.dt_hours, horizon: p.horizon };
        fleet_params.validate()?;
        let n = &self.network;
        let loads = n
            .loads
            .iter()
            .map(|l| Load {
                bus: l.bus,
                series: l.series.iter().flat_map(|&v| std::iter::repeat_n(v, l.hold)).collect(),
            })
            .collect();
        let network = match &n.ptdf {
            Some(ptdf) => {
                Network::with_ptdf(n.buses, n.slack_bus, n.generators.clone(), loads, n.lines.clone(), ptdf.clone())?
            }
            None => Network::new(n.buses, n.slack_bus, n.generators.clone(), loads, n.lines.clone())?,
        };
        let market = Market::new(network, self.aggregators.iter().map(|a| a.bus).collect())?;
        let fleets = (0..self.aggregators.len())
            .map(|k| Fleet::new(fleet_params, self.evs(k), &p.group_durations, &p.alpha))
            .collect::<Result<Vec<_>, _>>()?;
        let sched = SchedulerParams { v: p.v, alpha: p.alpha.clone(), r: p.group_durations.clone() };
        sched.validate()?;
        Ok(Built { market, fleets, sched, fleet_params, horizon: p.horizon, samples: p.samples, exec: p.exec })
    }
}

fn gen(bus: usize, a: f64, b: f64, p_max: f64) -> Generator {
    Generator { bus, a, b, c: 0.0, p_min: 0.0, p_max }
}

fn line(from: usize, to: usize, reactance: f64, limit: f64) -> Line {
    Line { from, to, limit, reactance }
}

/// Hourly shape with an evening surge, normalized to a peak near 1.3.
const DAY_SHAPE: [f64; 24] = [
    0.62, 0.58, 0.56, 0.55, 0.57, 0.63, 0.72, 0.83, 0.91, 0.95, 0.97, 0.98, 0.97, 0.96, 0.95, 0.97, 1.02, 1.30, 1.28,
    1.22, 1.12, 0.98, 0.82, 0.70,
];

fn hourly(base: f64) -> LoadSpec {
    LoadSpec { bus: 0, series: DAY_SHAPE.iter().map(|s| (base * s * 10.0).round() / 10.0).collect(), hold: 12 }
}

/// One aggregator, one group, two buses. Two EVs (4 and 6 kW) arrive at
/// slot 0; the slot-1 clearing is `x = λ = 10/3`.
pub fn toy() -> Scenario {
    let ev = |id, cap: f64, need: f64| EvTask {
        id,
        arrival_slot: 0,
        departure_slot: 12,
        energy_arrival: 10.0,
        energy_target: 10.0 + need,
        energy_min: 0.0,
        energy_max: 10.0 + need + 10.0,
        power_cap: cap,
        energy_now: 10.0,
    };
    Scenario {
        name: "toy".into(),
        seed: 1,
        params: Params {
            eta: 1.0,
            dt_hours: 1.0,
            horizon: 12,
            v: 2.0,
            group_durations: vec![12],
            alpha: vec![1.0],
            samples: 64,
            exec: Exec::Sequential,
        },
        network: NetworkSpec {
            buses: 2,
            slack_bus: 0,
            generators: vec![gen(0, 0.5, 0.0, 100.0)],
            loads: vec![],
            lines: vec![line(0, 1, 0.1, 100.0)],
            ptdf: None,
        },
        aggregators: vec![AggregatorSpec {
            name: "toy".into(),
            bus: 1,
            evs: vec![ev(1, 4.0, 12.0), ev(2, 6.0, 18.0)],
            generate: None,
        }],
    }
}

const DESK_DURATIONS: [usize; 10] = [48, 60, 72, 84, 96, 108, 120, 144, 168, 192];
const DESK_ALPHA: f64 = 480.0;

fn desk_params(v: f64) -> Params {
    Params {
        eta: 0.95,
        dt_hours: 5.0 / 60.0,
        horizon: 288,
        v,
        group_durations: DESK_DURATIONS.to_vec(),
        alpha: vec![DESK_ALPHA; DESK_DURATIONS.len()],
        samples: 64,
        exec: Exec::Parallel,
    }
}

fn desk_fleet(power: f64) -> FleetGen {
    FleetGen {
        evs_per_group: [30, 50],
        capacities_kwh: default_capacities(),
        soc_arrival: default_soc_arrival(),
        soc_departure: default_soc_departure(),
        power_cap_kw: power,
        arrival_window: [0, 240],
        latest_departure: Some(288),
    }
}

/// Scaled-down desk case: 6 buses, 3 aggregators (7, 60 and 120 kW
/// chargers), 10 groups, 288 five-minute slots.
pub fn paper_desk(seed: u64) -> Scenario {
    let loads = [(3, 1500.0), (4, 1200.0), (5, 700.0)]
        .into_iter()
        .map(|(bus, base)| LoadSpec { bus, ..hourly(base) })
        .collect();
    Scenario {
        name: "paper-desk".into(),
        seed,
        params: desk_params(80.0),
        network: NetworkSpec {
            buses: 6,
            slack_bus: 0,
            generators: vec![
                gen(0, 0.00165, 0.0, 4000.0),
                gen(2, 0.00195, 0.075, 3000.0),
                gen(5, 0.0024, 0.15, 2000.0),
            ],
            loads,
            lines: vec![
                line(0, 1, 0.10, 2500.0),
                line(0, 2, 0.15, 2500.0),
                line(1, 2, 0.20, 1500.0),
                line(1, 3, 0.10, 1800.0),
                line(2, 4, 0.12, 1800.0),
                line(3, 4, 0.25, 800.0),
                line(3, 5, 0.20, 800.0),
                line(4, 5, 0.15, 900.0),
            ],
            ptdf: None,
        },
        aggregators: [(1, 7.0), (3, 60.0), (4, 120.0)]
            .into_iter()
            .enumerate()
            .map(|(k, (bus, power))| AggregatorSpec {
                name: format!("agg{k}"),
                bus,
                evs: vec![],
                generate: Some(desk_fleet(power)),
            })
            .collect(),
    }
}

/// Seeded meshed network: a ring plus random chords, generators and loads
/// at random buses, and `aggs` aggregators with desk-sized fleets.
pub fn synthetic(buses: usize, aggs: usize, seed: u64) -> Scenario {
    assert!(buses >= 2, "need at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines: Vec<Line> = (0..buses).map(|b| line(b, (b + 1) % buses, rng.random_range(0.05..0.3), 0.0)).collect();
    if buses == 2 {
        lines.truncate(1);
    }
    for _ in 0..(buses * 11 / 30) {
        let a = rng.random_range(0..buses);
        let b = rng.random_range(0..buses);
        if a != b {
            lines.push(line(a, b, rng.random_range(0.05..0.3), 0.0));
        }
    }
    let n_gens = (buses / 5).max(2);
    let generators: Vec<Generator> = (0..n_gens)
        .map(|i| {
            let bus = if i == 0 { 0 } else { rng.random_range(0..buses) };
            gen(
                bus,
                rng.random_range(0.0005..0.002) * 6.0 / n_gens as f64,
                rng.random_range(0.0..0.2),
                12_000.0 / n_gens as f64 * 1.6,
            )
        })
        .collect();
    let n_loads = (buses * 2 / 3).max(1);
    let total_base = 3400.0 * (aggs as f64 / 3.0).max(1.0);
    let loads: Vec<LoadSpec> = (0..n_loads)
        .map(|_| LoadSpec { bus: rng.random_range(0..buses), ..hourly(total_base / n_loads as f64) })
        .collect();
    let limit = total_base * 0.9;
    for l in &mut lines {
        l.limit = (limit * rng.random_range(0.6..1.2)).round();
    }
    let powers = [7.0, 60.0, 120.0];
    let aggregators = (0..aggs)
        .map(|k| AggregatorSpec {
            name: format!("agg{k}"),
            bus: rng.random_range(0..buses),
            evs: vec![],
            generate: Some(desk_fleet(powers[k % 3])),
        })
        .collect();
    let mut s = Scenario {
        name: format!("synthetic-{buses}bus-{aggs}agg"),
        seed,
        params: desk_params(80.0),
        network: NetworkSpec { buses, slack_bus: 0, generators, loads, lines, ptdf: None },
        aggregators,
    };
    widen_until_deliverable(&mut s);
    s
}

/// Scales every line limit up by a quarter until the fixed load alone
/// clears in each load period.
fn widen_until_deliverable(s: &mut Scenario) {
    let step = s.network.loads.iter().map(|l| l.hold).min().unwrap_or(1).max(1);
    let idle = vec![(0.0, 0.0); s.aggregators.len()];
    for _ in 0..20 {
        let Ok(built) = s.build() else { return };
        if (0..s.params.horizon).step_by(step).all(|t| built.market.clear_p3_bounds(&idle, t).is_ok()) {
            return;
        }
        for l in &mut s.network.lines {
            l.limit = (l.limit * 1.25).round();
        }
    }
}

/// Small randomized case for validation sweeps: 3 to 6 buses, 1 to 3
/// aggregators, a few groups, a short horizon.
pub fn fuzz(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF022);
    let buses = rng.random_range(3..=6);
    let aggs = rng.random_range(1..=3);
    let mut s = synthetic(buses, aggs, seed);
    let groups = rng.random_range(2..=4);
    let durations: Vec<usize> = (0..groups).map(|g| 12 + 12 * g + rng.random_range(0..6)).collect();
    s.name = format!("fuzz-{seed}");
    s.params.horizon = rng.random_range(48..=96);
    s.params.alpha = (0..groups).map(|_| rng.random_range(0.5..2.0)).collect();
    s.params.group_durations = durations;
    s.params.v = rng.random_range(20.0..120.0);
    s.params.samples = rng.random_range(8..=64);
    let window = s.params.horizon * 3 / 4;
    for a in &mut s.aggregators {
        if let Some(g) = &mut a.generate {
            g.evs_per_group = [2, 8];
            g.arrival_window = [0, window];
            g.latest_departure = Some(s.params.horizon);
        }
    }
    s
}
