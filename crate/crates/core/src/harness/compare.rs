//! All four strategies on one scenario, tabulated against the offline optimum.

use std::io::Write;

use serde::Serialize;

use super::{run, HarnessError, RunOptions, RunOutput, Strategy};
use crate::scenario::Scenario;

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub strategy: Strategy,
    pub total_cost: f64,
    /// Total cost as a percentage of the offline benchmark's.
    pub relative_pct: f64,
    pub unit_cost: f64,
    pub total_energy_kwh: f64,
    pub completion_rate: f64,
    pub mean_delay: f64,
}

/// Runs every strategy in [`Strategy::ALL`] order. Runs are independent and
/// spread over the scenario's executor.
pub fn compare(scenario: &Scenario) -> Result<Vec<RunOutput>, HarnessError> {
    scenario.params.exec.try_map(&Strategy::ALL, |&s| run(scenario, s, RunOptions::default()))
}

pub fn compare_rows(runs: &[RunOutput]) -> Vec<CompareRow> {
    let base = runs.iter().find(|r| r.summary.strategy == Strategy::B1).map(|r| r.summary.total_cost);
    runs.iter()
        .map(|r| {
            let m = &r.summary;
            let relative_pct = match base {
                Some(b) if b.abs() > 0.0 => 100.0 * m.total_cost / b,
                _ => f64::NAN,
            };
            CompareRow {
                strategy: m.strategy,
                total_cost: m.total_cost,
                relative_pct,
                unit_cost: m.unit_cost,
                total_energy_kwh: m.total_energy_kwh,
                completion_rate: m.completion_rate,
                mean_delay: m.mean_delay,
            }
        })
        .collect()
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], w: W) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
