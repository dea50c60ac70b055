//! Parameter sweeps of the online scheme.

use serde::{Deserialize, Serialize};

use super::{run, HarnessError, RunOptions, Strategy};
use crate::par::Exec;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    V,
    /// Applied to every group.
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub total_cost: f64,
    pub unit_cost: f64,
    pub total_energy_kwh: f64,
    pub completion_rate: f64,
    pub mean_delay: f64,
    pub gap_bound_total: f64,
}

/// One online run per value; points are independent and run under `exec`.
pub fn sweep(
    scenario: &Scenario,
    param: SweepParam,
    values: &[f64],
    exec: Exec,
) -> Result<Vec<SweepPoint>, HarnessError> {
    exec.try_map(values, |&value| {
        let mut s = scenario.clone();
        match param {
            SweepParam::V => s.params.v = value,
            SweepParam::Alpha => s.params.alpha.iter_mut().for_each(|a| *a = value),
        }
        s.validate()?;
        let out = run(&s, Strategy::Online, RunOptions::default())?;
        let m = out.summary;
        Ok(SweepPoint {
            param,
            value,
            total_cost: m.total_cost,
            unit_cost: m.unit_cost,
            total_energy_kwh: m.total_energy_kwh,
            completion_rate: m.completion_rate,
            mean_delay: m.mean_delay,
            gap_bound_total: m.gap_bound_total,
        })
    })
}
