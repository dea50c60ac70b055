//! Self-checks of a scenario run against the scheme's guarantees.

use serde::Serialize;

use super::{run, HarnessError, RunOptions, Strategy};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Runs the online scheme with full market checking and, when `offline`
/// is set, the offline optimum for the cost-gap bound.
pub fn validate_scenario(scenario: &Scenario, offline: bool) -> Result<ValidationReport, HarnessError> {
    let opts = RunOptions { check_market: true, debug_solver: false };
    let on = run(scenario, Strategy::Online, opts)?.summary;
    let mut checks = vec![
        check(
            "market_optimality",
            on.market_check_failures.is_empty(),
            match on.market_check_failures.first() {
                Some(f) => format!("{} failing clearings; first: {f}", on.market_check_failures.len()),
                None => format!("{} clearings satisfy balance, limits, complementarity and price formula", on.horizon),
            },
        ),
        check(
            "refinement_not_worse",
            on.refinement_worse == 0,
            format!("{} slots where refinement raised the objective", on.refinement_worse),
        ),
        check(
            "allocation_matches_response",
            on.prop4_violations == 0,
            format!(
                "{} of {} checks off; max residual {:.3e} kW",
                on.prop4_violations, on.prop4_checks, on.prop4_max_residual
            ),
        ),
        check(
            "delay_bound",
            on.delay_violations == 0,
            format!("{} EVs beyond their group's delay bound", on.delay_violations),
        ),
        check(
            "accounting",
            on.accounting_residual <= 1e-6 * (1.0 + on.total_cost.abs()),
            format!("payments vs Σ π x Δt residual {:.3e}", on.accounting_residual),
        ),
    ];
    if offline {
        let off = run(scenario, Strategy::B1, opts)?.summary;
        let t = on.horizon as f64;
        let mut worst = f64::NEG_INFINITY;
        let mut ok = true;
        for (a, b) in on.aggregators.iter().zip(&off.aggregators) {
            let gap = (a.cost - b.cost) / t;
            ok &= gap <= a.gap_bound;
            worst = worst.max(if a.gap_bound > 0.0 { gap / a.gap_bound } else { gap });
        }
        checks.push(check(
            "cost_gap_bound",
            ok,
            format!(
                "online {:.4} vs offline {:.4}; worst per-aggregator gap/bound ratio {:.3e}",
                on.total_cost, off.total_cost, worst
            ),
        ));
    }
    Ok(ValidationReport { scenario: scenario.name.clone(), seed: scenario.seed, checks })
}
