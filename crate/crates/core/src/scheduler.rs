//! Virtual queues and the per-slot drift-plus-penalty scheduler.
//!
//! Each group carries a demand backlog `q` (kW of charging work not yet
//! served) and a delay queue `z` that grows by `α/R` every slot the backlog
//! is nonzero. The per-slot problem
//!
//! ```text
//! min Σ_g (Vπ − q_g − z_g)·x_g + ½ x_g²   s.t. 0 ≤ x_g ≤ X_g
//! ```
//!
//! separates by group and has the closed form `clamp(q + z − Vπ, 0, X)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("V must be positive, got {0}")]
    BadV(f64),
    #[error("group {group}: {reason}")]
    BadGroup { group: usize, reason: String },
    #[error("expected {expected} groups, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    pub v: f64,
    pub alpha: Vec<f64>,
    /// Parking duration per group, in slots.
    pub r: Vec<usize>,
}

impl SchedulerParams {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(SchedulerError::BadV(self.v));
        }
        if self.alpha.len() != self.r.len() {
            return Err(SchedulerError::Length { expected: self.r.len(), got: self.alpha.len() });
        }
        for (g, (&a, &r)) in self.alpha.iter().zip(&self.r).enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(SchedulerError::BadGroup { group: g, reason: format!("alpha = {a}") });
            }
            if r == 0 {
                return Err(SchedulerError::BadGroup { group: g, reason: "R = 0".into() });
            }
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.r.len()
    }
}

pub fn update_q(q: f64, x: f64, a: f64) -> f64 {
    (q - x).max(0.0) + a
}

pub fn update_z(z: f64, q: f64, x: f64, alpha: f64, r: usize) -> f64 {
    let ind = if q > 0.0 { 1.0 } else { 0.0 };
    (z + alpha / r as f64 * ind - x).max(0.0)
}

/// Per-group optimal charging power at price `price`.
pub fn solve_p2(price: f64, q: &[f64], z: &[f64], caps: &[f64], v: f64) -> Vec<f64> {
    q.iter().zip(z).zip(caps).map(|((&q, &z), &cap)| p2_group(price, q + z, cap, v)).collect()
}

pub(crate) fn p2_group(price: f64, backlog: f64, cap: f64, v: f64) -> f64 {
    (backlog - v * price).clamp(0.0, cap.max(0.0))
}

/// Objective of the per-slot problem for one group.
pub fn p2_objective(x: f64, price: f64, backlog: f64, v: f64) -> f64 {
    (v * price - backlog) * x + 0.5 * x * x
}

/// Linear variant: all-or-nothing per group. A price exactly at a group's
/// threshold `(q+z)/V` charges at full cap.
pub fn solve_p2_linear(price: f64, q: &[f64], z: &[f64], caps: &[f64], v: f64) -> Vec<f64> {
    q.iter()
        .zip(z)
        .zip(caps)
        .map(|((&q, &z), &cap)| if v * price <= q + z && q + z > 0.0 { cap.max(0.0) } else { 0.0 })
        .collect()
}

/// Queue state of one aggregator, plus running maxima standing in for the
/// horizon-wide constants of the performance bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueState {
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub q_max_seen: Vec<f64>,
    pub z_max_seen: Vec<f64>,
    pub a_max_seen: Vec<f64>,
    pub cap_max_seen: Vec<f64>,
}

impl QueueState {
    pub fn new(groups: usize) -> Self {
        Self {
            q: vec![0.0; groups],
            z: vec![0.0; groups],
            q_max_seen: vec![0.0; groups],
            z_max_seen: vec![0.0; groups],
            a_max_seen: vec![0.0; groups],
            cap_max_seen: vec![0.0; groups],
        }
    }

    pub fn groups(&self) -> usize {
        self.q.len()
    }

    pub fn backlog(&self, g: usize) -> f64 {
        self.q[g] + self.z[g]
    }

    /// Records this slot's caps before they are used.
    pub fn observe_caps(&mut self, caps: &[f64]) {
        for (m, &c) in self.cap_max_seen.iter_mut().zip(caps) {
            *m = m.max(c);
        }
    }

    /// Advances both queues by one slot given dispatch `x` and arrivals `a`.
    pub fn advance(&mut self, x: &[f64], a: &[f64], params: &SchedulerParams) {
        for g in 0..self.groups() {
            let z = update_z(self.z[g], self.q[g], x[g], params.alpha[g], params.r[g]);
            let q = update_q(self.q[g], x[g], a[g]);
            self.q[g] = q;
            self.z[g] = z;
            self.q_max_seen[g] = self.q_max_seen[g].max(q);
            self.z_max_seen[g] = self.z_max_seen[g].max(z);
            self.a_max_seen[g] = self.a_max_seen[g].max(a[g]);
        }
    }

    /// Worst-case delay of group `g`, in slots.
    pub fn delay_bound(&self, g: usize, params: &SchedulerParams) -> f64 {
        params.r[g] as f64 * (self.q_max_seen[g] + self.z_max_seen[g]) / params.alpha[g]
    }

    /// Bound on the time-average optimality gap, from the running maxima.
    pub fn gap_bound(&self, params: &SchedulerParams) -> f64 {
        gap_bound(
            &BoundConstants {
                a: self.a_max_seen.clone(),
                q: self.q_max_seen.clone(),
                z: self.z_max_seen.clone(),
                x_bar: self.cap_max_seen.clone(),
            },
            params,
        )
    }
}

/// Horizon-wide constants per group.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub x_bar: Vec<f64>,
}

pub fn gap_constant(c: &BoundConstants, params: &SchedulerParams) -> f64 {
    let mut m = 0.0;
    for g in 0..params.groups() {
        let ar = params.alpha[g] / params.r[g] as f64;
        m += 0.5 * c.a[g] * c.a[g] + c.q[g] * c.a[g] + ar * c.z[g];
        m += 0.5 * (ar * ar).max(c.x_bar[g] * c.x_bar[g]);
        m += 0.5 * c.x_bar[g] * c.x_bar[g];
    }
    m
}

pub fn gap_bound(c: &BoundConstants, params: &SchedulerParams) -> f64 {
    gap_constant(c, params) / params.v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_variant_is_bang_bang() {
        let x = solve_p2_linear(4.0, &[10.0, 1.0], &[0.0, 0.0], &[4.0, 3.0], 2.0);
        assert_eq!(x, vec![4.0, 0.0]);
    }

    #[test]
    fn indicator_uses_pre_update_backlog() {
        let params = SchedulerParams { v: 1.0, alpha: vec![1.0], r: vec![2] };
        let mut s = QueueState::new(1);
        s.advance(&[0.0], &[3.0], &params);
        assert_eq!((s.q[0], s.z[0]), (3.0, 0.0));
        s.advance(&[0.0], &[0.0], &params);
        assert_eq!((s.q[0], s.z[0]), (3.0, 0.5));
    }
}
