//! EV fleet model: per-vehicle charging jobs, their translation into
//! group-level arrival rates and power caps, and FIFO disaggregation of
//! group dispatch back to vehicles.
//!
//! Powers are in kW, energies in kWh. The conversion between the two
//! (`η·Δt`) happens only in [`step_energy`] and the closure helpers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack used when comparing energies against targets.
const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("EV {id}: {reason}")]
    InvalidEv { id: u64, reason: String },
    #[error("invalid fleet parameters: {0}")]
    InvalidParams(String),
    #[error("EV {0} has no charging need")]
    ZeroNeed(u64),
    #[error("group {group}: dispatch {x} kW exceeds cap {cap} kW")]
    OverCap { group: usize, x: f64, cap: f64 },
    #[error("EV {id}: energy {energy} kWh would exceed maximum {max} kWh")]
    Overshoot { id: u64, energy: f64, max: f64 },
    #[error("no groups configured")]
    NoGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetParams {
    pub eta: f64,
    /// Hours per slot.
    pub dt: f64,
    pub horizon: usize,
}

impl FleetParams {
    pub fn validate(&self) -> Result<(), FleetError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(FleetError::InvalidParams(format!("eta = {} not in (0, 1]", self.eta)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FleetError::InvalidParams(format!("dt = {} must be positive", self.dt)));
        }
        if self.horizon == 0 {
            return Err(FleetError::InvalidParams("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Energy delivered by one slot at `power` kW.
    pub fn slot_energy(&self, power: f64) -> f64 {
        self.eta * power * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvTask {
    pub id: u64,
    pub arrival_slot: usize,
    pub departure_slot: usize,
    pub energy_arrival: f64,
    pub energy_target: f64,
    pub energy_min: f64,
    pub energy_max: f64,
    pub power_cap: f64,
    /// Current battery energy; reset to `energy_arrival` when a run starts.
    #[serde(skip)]
    pub energy_now: f64,
}

impl EvTask {
    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |reason: String| Err(FleetError::InvalidEv { id: self.id, reason });
        if self.arrival_slot >= self.departure_slot {
            return bad(format!("arrival {} not before departure {}", self.arrival_slot, self.departure_slot));
        }
        let chain = [self.energy_min, self.energy_arrival, self.energy_target, self.energy_max];
        if chain.iter().any(|e| !e.is_finite()) || chain.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!(
                "energy levels out of order: min {}, arrival {}, target {}, max {}",
                chain[0], chain[1], chain[2], chain[3]
            ));
        }
        if !(self.power_cap > 0.0 && self.power_cap.is_finite()) {
            return bad(format!("power cap {} must be positive", self.power_cap));
        }
        Ok(())
    }

    pub fn need(&self) -> f64 {
        (self.energy_target - self.energy_arrival).max(0.0)
    }

    pub fn parking_duration(&self) -> usize {
        self.departure_slot - self.arrival_slot
    }

    pub fn is_complete(&self) -> bool {
        self.energy_now >= self.energy_target - ENERGY_TOL * (1.0 + self.energy_target.abs())
    }

    pub fn reset(&mut self) {
        self.energy_now = self.energy_arrival;
    }
}

/// Slots needed at full power to cover the EV's need (standard ceiling).
pub fn min_charge_slots(ev: &EvTask, params: &FleetParams) -> usize {
    let need = ev.need();
    if need <= 0.0 {
        return 0;
    }
    let ratio = need / params.slot_energy(ev.power_cap);
    // Absorb rounding so that exact multiples are not pushed up a slot.
    (ratio * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Power in the final charging slot, in `(0, P_v]`.
pub fn end_slot_power(ev: &EvTask, params: &FleetParams) -> Result<f64, FleetError> {
    let n = min_charge_slots(ev, params);
    if n == 0 {
        return Err(FleetError::ZeroNeed(ev.id));
    }
    let p = ev.need() / (params.eta * params.dt) - (n - 1) as f64 * ev.power_cap;
    Ok(p.min(ev.power_cap))
}

/// Charging-task arrival rate of one EV: full power for `T_min − 1` slots
/// from arrival, then the end-slot residual, so that the series integrates
/// to exactly the EV's need.
pub fn arrival_rate(ev: &EvTask, t: usize, params: &FleetParams) -> f64 {
    let n = min_charge_slots(ev, params);
    if n == 0 || t < ev.arrival_slot {
        return 0.0;
    }
    let k = t - ev.arrival_slot;
    if k + 1 < n {
        ev.power_cap
    } else if k + 1 == n {
        end_slot_power(ev, params).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Largest admissible charging power at slot `t` given the current energy.
pub fn max_power(ev: &EvTask, t: usize, params: &FleetParams) -> f64 {
    if t < ev.arrival_slot || t >= ev.departure_slot || ev.is_complete() {
        return 0.0;
    }
    let headroom = ev.energy_target - ev.energy_now;
    if headroom >= params.slot_energy(ev.power_cap) {
        ev.power_cap
    } else {
        (headroom / (params.eta * params.dt)).clamp(0.0, ev.power_cap)
    }
}

/// Battery energy after charging at `p` kW for one slot.
pub fn step_energy(ev: &EvTask, p: f64, params: &FleetParams) -> Result<f64, FleetError> {
    let mut e = ev.energy_now + params.slot_energy(p.max(0.0));
    let tol = ENERGY_TOL * (1.0 + ev.energy_max.abs());
    if e > ev.energy_max + tol {
        return Err(FleetError::Overshoot { id: ev.id, energy: e, max: ev.energy_max });
    }
    if (e - ev.energy_target).abs() <= tol {
        e = ev.energy_target;
    }
    Ok(e.min(ev.energy_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: usize,
    pub parking_duration: usize,
    pub alpha: f64,
    /// Indices into the owning fleet's EV list, earliest arrival first.
    pub members: Vec<usize>,
}

/// The EVs served by one aggregator, partitioned into delay-class groups.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub params: FleetParams,
    pub evs: Vec<EvTask>,
    pub groups: Vec<GroupSpec>,
}

impl Fleet {
    /// Builds a fleet, assigning each EV to the group whose parking duration
    /// matches. Unmatched EVs go to the nearest longer group, or the longest
    /// group when none is longer.
    pub fn new(
        params: FleetParams,
        mut evs: Vec<EvTask>,
        durations: &[usize],
        alphas: &[f64],
    ) -> Result<Self, FleetError> {
        params.validate()?;
        if durations.is_empty() || durations.len() != alphas.len() {
            return Err(FleetError::NoGroups);
        }
        for (g, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(FleetError::InvalidParams(format!("alpha for group {g} must be positive, got {a}")));
            }
            if durations[g] == 0 {
                return Err(FleetError::InvalidParams(format!("group {g} has zero parking duration")));
            }
        }
        for ev in &mut evs {
            ev.validate()?;
            ev.reset();
        }
        let mut groups: Vec<GroupSpec> = durations
            .iter()
            .zip(alphas)
            .enumerate()
            .map(|(g, (&d, &a))| GroupSpec { group_id: g, parking_duration: d, alpha: a, members: Vec::new() })
            .collect();
        for (i, ev) in evs.iter().enumerate() {
            let g = assign_group(ev.parking_duration(), durations);
            groups[g].members.push(i);
        }
        for g in &mut groups {
            g.members.sort_by_key(|&i| (evs[i].arrival_slot, evs[i].id));
        }
        Ok(Self { params, evs, groups })
    }

    pub fn reset(&mut self) {
        self.evs.iter_mut().for_each(EvTask::reset);
    }

    /// `(a_g(t), X_g(t))` for group `g`.
    pub fn group_series(&self, g: usize, t: usize) -> (f64, f64) {
        self.groups[g].members.iter().fold((0.0, 0.0), |(a, x), &i| {
            let ev = &self.evs[i];
            (a + arrival_rate(ev, t, &self.params), x + max_power(ev, t, &self.params))
        })
    }

    /// Arrival rates and caps for every group at slot `t`.
    pub fn series(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        (0..self.groups.len()).map(|g| self.group_series(g, t)).unzip()
    }

    /// Splits group dispatch `x_g` over members, oldest first.
    pub fn disaggregate(&self, g: usize, x_g: f64, t: usize) -> Result<Vec<(usize, f64)>, FleetError> {
        let members = &self.groups[g].members;
        let caps: Vec<f64> = members.iter().map(|&i| max_power(&self.evs[i], t, &self.params)).collect();
        let cap: f64 = caps.iter().sum();
        if x_g > cap + 1e-9 * (1.0 + cap) || x_g < -1e-9 {
            return Err(FleetError::OverCap { group: g, x: x_g, cap });
        }
        Ok(fifo_fill(members, &caps, x_g.clamp(0.0, cap)))
    }

    /// FIFO split of `x` over all EVs of the fleet regardless of group.
    pub fn disaggregate_all(&self, x: f64, t: usize) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.evs.len()).collect();
        order.sort_by_key(|&i| (self.evs[i].arrival_slot, self.evs[i].id));
        let caps: Vec<f64> = order.iter().map(|&i| max_power(&self.evs[i], t, &self.params)).collect();
        let cap: f64 = caps.iter().sum();
        fifo_fill(&order, &caps, x.clamp(0.0, cap))
    }

    /// Applies per-EV powers for one slot.
    pub fn apply(&mut self, powers: &[(usize, f64)]) -> Result<(), FleetError> {
        for &(i, p) in powers {
            let e = step_energy(&self.evs[i], p, &self.params)?;
            self.evs[i].energy_now = e;
        }
        Ok(())
    }

    pub fn total_cap(&self) -> f64 {
        self.evs.iter().map(|e| e.power_cap).sum()
    }
}

fn fifo_fill(order: &[usize], caps: &[f64], x: f64) -> Vec<(usize, f64)> {
    let mut left = x;
    order
        .iter()
        .zip(caps)
        .map(|(&i, &c)| {
            let p = c.min(left).max(0.0);
            left -= p;
            (i, p)
        })
        .collect()
}

fn assign_group(duration: usize, durations: &[usize]) -> usize {
    if let Some(g) = durations.iter().position(|&d| d == duration) {
        return g;
    }
    let longer = durations.iter().enumerate().filter(|(_, &d)| d > duration).min_by_key(|(g, &d)| (d, *g));
    match longer {
        Some((g, _)) => g,
        None => {
            durations.iter().enumerate().max_by_key(|(g, &d)| (d, std::cmp::Reverse(*g))).map(|(g, _)| g).unwrap_or(0)
        }
    }
}
