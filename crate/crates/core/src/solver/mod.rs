//! Convex quadratic and linear programming.
//!
//! Two back ends share one problem/solution vocabulary:
//!
//! * [`solve_qp`] / [`solve_lp`]: a dense primal active-set method with
//!   explicit variable bounds. It returns exact multipliers from the final
//!   working set, which is what the market needs to price energy and
//!   congestion. Used for every per-slot clearing problem.
//! * [`sparse::solve_sparse`]: an interior-point back end for the large,
//!   sparse full-horizon program solved by the offline benchmark.
//!
//! Problem form:
//!
//! ```text
//! minimize    ½ xᵀ H x + cᵀ x + constant
//! subject to  E x  = b_eq
//!             G x <= b_in
//!             l <= x <= u
//! ```
//!
//! Multipliers follow the Lagrangian
//! `L = f + ν_eqᵀ(Ex − b) + ν_inᵀ(Gx − h) − μ_lᵀ(x − l) + μ_uᵀ(x − u)`,
//! so `ν_in`, `μ_l`, `μ_u` are nonnegative at an optimum.

mod active_set;
pub mod sparse;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use active_set::{solve_lp, solve_qp, PivotRule, SolveOptions};

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
/// Stationarity tolerance, scaled by `1 + ‖c‖∞`.
pub const STAT_TOL: f64 = 1e-8;
/// Relative threshold below which a KKT eigenvalue counts as zero.
pub const PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("quadratic term must be positive semidefinite: {0}")]
    NotConvex(String),
    #[error("linear program has a nonzero quadratic term")]
    NotLinear,
    #[error("iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// A single linear constraint row `coeffs · x (= or <=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub quadratic: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq_constraints: Vec<Constraint>,
    pub ineq_constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// An unconstrained problem in `n` variables with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            quadratic: DMatrix::zeros(n, n),
            linear: vec![0.0; n],
            constant: 0.0,
            eq_constraints: Vec::new(),
            ineq_constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    /// Adds `value` to the diagonal entry `H[var, var]`.
    pub fn add_diag(&mut self, var: usize, value: f64) {
        self.quadratic[(var, var)] += value;
    }

    /// Adds an equality row given as sparse `(index, coefficient)` terms.
    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let coeffs = self.dense_row(terms);
        self.eq_constraints.push(Constraint { coeffs, rhs });
        self.eq_constraints.len() - 1
    }

    /// Adds a `<=` row given as sparse `(index, coefficient)` terms.
    pub fn add_ineq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let coeffs = self.dense_row(terms);
        self.ineq_constraints.push(Constraint { coeffs, rhs });
        self.ineq_constraints.len() - 1
    }

    fn dense_row(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut row = vec![0.0; self.num_vars()];
        for &(j, v) in terms {
            row[j] += v;
        }
        row
    }

    pub fn is_linear(&self) -> bool {
        self.quadratic.iter().all(|&v| v == 0.0)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.num_vars();
        let mut val = self.constant;
        for i in 0..n {
            val += self.linear[i] * x[i];
            let mut hx = 0.0;
            for j in 0..n {
                hx += self.quadratic[(i, j)] * x[j];
            }
            val += 0.5 * x[i] * hx;
        }
        val
    }

    pub(crate) fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.quadratic.nrows() != n || self.quadratic.ncols() != n {
            return Err(SolverError::Dimension(format!(
                "quadratic is {}x{}, expected {n}x{n}",
                self.quadratic.nrows(),
                self.quadratic.ncols()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension("bound vectors".into()));
        }
        for (k, row) in self.eq_constraints.iter().chain(&self.ineq_constraints).enumerate() {
            if row.coeffs.len() != n {
                return Err(SolverError::Dimension(format!("row {k} has {} coefficients", row.coeffs.len())));
            }
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(SolverError::Dimension(format!(
                    "variable {j} has lower {} > upper {}",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.quadratic[(j, j)] < 0.0 {
                return Err(SolverError::NotConvex(format!("H[{j},{j}] = {}", self.quadratic[(j, j)])));
            }
            for i in 0..j {
                if (self.quadratic[(i, j)] - self.quadratic[(j, i)]).abs()
                    > 1e-12 * (1.0 + self.quadratic[(i, j)].abs())
                {
                    return Err(SolverError::NotConvex(format!("H not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// KKT residuals of a candidate primal-dual pair.
    pub fn kkt_residuals(&self, sol: &QpSolution) -> KktResiduals {
        let n = self.num_vars();
        let x = &sol.primal;
        let mut grad: Vec<f64> =
            (0..n).map(|i| self.linear[i] + (0..n).map(|j| self.quadratic[(i, j)] * x[j]).sum::<f64>()).collect();
        for (row, nu) in self.eq_constraints.iter().zip(&sol.duals_eq) {
            for j in 0..n {
                grad[j] += nu * row.coeffs[j];
            }
        }
        for (row, nu) in self.ineq_constraints.iter().zip(&sol.duals_ineq) {
            for j in 0..n {
                grad[j] += nu * row.coeffs[j];
            }
        }
        for j in 0..n {
            grad[j] += sol.duals_upper[j] - sol.duals_lower[j];
        }
        let stationarity = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut primal: f64 = 0.0;
        let mut compl: f64 = 0.0;
        let mut dual_neg: f64 = 0.0;
        for row in &self.eq_constraints {
            primal = primal.max((dot(&row.coeffs, x) - row.rhs).abs());
        }
        for (row, nu) in self.ineq_constraints.iter().zip(&sol.duals_ineq) {
            let slack = row.rhs - dot(&row.coeffs, x);
            primal = primal.max(-slack);
            compl = compl.max((nu * slack).abs());
            dual_neg = dual_neg.max(-nu);
        }
        for j in 0..n {
            primal = primal.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
            if self.lower[j].is_finite() {
                compl = compl.max((sol.duals_lower[j] * (x[j] - self.lower[j])).abs());
            }
            if self.upper[j].is_finite() {
                compl = compl.max((sol.duals_upper[j] * (self.upper[j] - x[j])).abs());
            }
            dual_neg = dual_neg.max(-sol.duals_lower[j]).max(-sol.duals_upper[j]);
        }
        KktResiduals { stationarity, primal_feasibility: primal, complementarity: compl, dual_infeasibility: dual_neg }
    }

    pub(crate) fn linear_scale(&self) -> f64 {
        1.0 + self.linear.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
    pub dual_infeasibility: f64,
}

impl KktResiduals {
    /// Whether the residuals meet the solver's optimality contract for `p`.
    pub fn within_tolerance(&self, p: &QpProblem) -> bool {
        let scale = p.linear_scale();
        self.stationarity <= STAT_TOL * scale
            && self.primal_feasibility <= FEAS_TOL
            && self.complementarity <= FEAS_TOL * scale
            && self.dual_infeasibility <= FEAS_TOL * scale
    }
}

/// Where a working-set member sits, for the diagnostic dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ActiveConstraint {
    Lower(usize),
    Upper(usize),
    Inequality(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub status: QpStatus,
    pub primal: Vec<f64>,
    pub duals_eq: Vec<f64>,
    pub duals_ineq: Vec<f64>,
    pub duals_lower: Vec<f64>,
    pub duals_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub active_set: Vec<ActiveConstraint>,
    pub residuals: KktResiduals,
}

impl QpSolution {
    pub(crate) fn non_optimal(status: QpStatus, p: &QpProblem, iterations: usize) -> Self {
        let n = p.num_vars();
        Self {
            status,
            primal: vec![f64::NAN; n],
            duals_eq: vec![0.0; p.eq_constraints.len()],
            duals_ineq: vec![0.0; p.ineq_constraints.len()],
            duals_lower: vec![0.0; n],
            duals_upper: vec![0.0; n],
            objective: f64::NAN,
            iterations,
            active_set: Vec::new(),
            residuals: KktResiduals::default(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
