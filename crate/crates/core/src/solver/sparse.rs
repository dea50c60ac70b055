//! Interior-point back end for large sparse programs, built on Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::Serialize;

use super::{QpProblem, QpStatus, SolverError};

/// Sparse problem in the same form as [`QpProblem`]. `quadratic` holds
/// entries `(i, j, v)` of the symmetric `H` with `i <= j`.
#[derive(Debug, Clone, Default)]
pub struct SparseQp {
    pub num_vars: usize,
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<Vec<(usize, f64)>>,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SparseQp {
    pub fn new(n: usize) -> Self {
        Self {
            num_vars: n,
            linear: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    pub fn add_eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_rows.len() - 1
    }

    pub fn add_ineq(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
        self.ineq_rows.len() - 1
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.constant + super::dot(&self.linear, x);
        for &(i, j, h) in &self.quadratic {
            v += if i == j { 0.5 * h * x[i] * x[i] } else { h * x[i] * x[j] };
        }
        v
    }
}

impl From<&QpProblem> for SparseQp {
    fn from(p: &QpProblem) -> Self {
        let n = p.num_vars();
        let sparse_row = |c: &[f64]| c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
        let mut quadratic = Vec::new();
        for j in 0..n {
            for i in 0..=j {
                let v = p.quadratic[(i, j)];
                if v != 0.0 {
                    quadratic.push((i, j, v));
                }
            }
        }
        Self {
            num_vars: n,
            quadratic,
            linear: p.linear.clone(),
            constant: p.constant,
            eq_rows: p.eq_constraints.iter().map(|r| sparse_row(&r.coeffs)).collect(),
            eq_rhs: p.eq_constraints.iter().map(|r| r.rhs).collect(),
            ineq_rows: p.ineq_constraints.iter().map(|r| sparse_row(&r.coeffs)).collect(),
            ineq_rhs: p.ineq_constraints.iter().map(|r| r.rhs).collect(),
            lower: p.lower.clone(),
            upper: p.upper.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SparseSolution {
    pub status: QpStatus,
    pub primal: Vec<f64>,
    pub duals_eq: Vec<f64>,
    pub duals_ineq: Vec<f64>,
    pub duals_lower: Vec<f64>,
    pub duals_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
}

/// Solves `p` to relative accuracy `tol`.
pub fn solve_sparse(p: &SparseQp, tol: f64) -> Result<SparseSolution, SolverError> {
    let n = p.num_vars;
    if p.linear.len() != n || p.lower.len() != n || p.upper.len() != n {
        return Err(SolverError::Dimension("sparse problem vectors".into()));
    }
    if p.eq_rows.len() != p.eq_rhs.len() || p.ineq_rows.len() != p.ineq_rhs.len() {
        return Err(SolverError::Dimension("row/rhs count".into()));
    }

    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, j, v) in &p.quadratic {
        if i >= n || j >= n {
            return Err(SolverError::Dimension(format!("H entry ({i},{j})")));
        }
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        if r == c && v < 0.0 {
            return Err(SolverError::NotConvex(format!("H[{r},{r}] = {v}")));
        }
        pi.push(r);
        pj.push(c);
        pv.push(v);
    }
    let hess = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut row = 0;
    for (r, rhs) in p.eq_rows.iter().zip(&p.eq_rhs).chain(p.ineq_rows.iter().zip(&p.ineq_rhs)) {
        for &(j, v) in r {
            if j >= n {
                return Err(SolverError::Dimension(format!("column {j} out of range")));
            }
            ai.push(row);
            aj.push(j);
            av.push(v);
        }
        b.push(*rhs);
        row += 1;
    }
    let mut lower_rows = vec![None; n];
    let mut upper_rows = vec![None; n];
    for j in 0..n {
        if p.lower[j] > p.upper[j] {
            return Err(SolverError::Dimension(format!("variable {j} has empty bounds")));
        }
        if p.lower[j].is_finite() {
            ai.push(row);
            aj.push(j);
            av.push(-1.0);
            b.push(-p.lower[j]);
            lower_rows[j] = Some(row);
            row += 1;
        }
        if p.upper[j].is_finite() {
            ai.push(row);
            aj.push(j);
            av.push(1.0);
            b.push(p.upper[j]);
            upper_rows[j] = Some(row);
            row += 1;
        }
    }
    let a = CscMatrix::new_from_triplets(row, n, ai, aj, av);
    let m_eq = p.eq_rows.len();
    let mut cones = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    if row > m_eq {
        cones.push(SupportedConeT::NonnegativeConeT(row - m_eq));
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(400)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas(tol)
        .build()
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let mut solver = DefaultSolver::new(&hess, &p.linear, &a, &b, &cones, settings)
        .map_err(|e| SolverError::Numerical(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => QpStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => QpStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => QpStatus::Unbounded,
        other => return Err(SolverError::Numerical(format!("interior point stopped: {other:?}"))),
    };
    let z = &sol.z;
    let pick = |rows: &[Option<usize>]| rows.iter().map(|r| r.map_or(0.0, |k| z[k])).collect::<Vec<_>>();
    let primal = sol.x.clone();
    Ok(SparseSolution {
        status,
        objective: if status == QpStatus::Optimal { p.objective(&primal) } else { f64::NAN },
        primal,
        duals_eq: z[..m_eq].to_vec(),
        duals_ineq: z[m_eq..m_eq + p.ineq_rows.len()].to_vec(),
        duals_lower: pick(&lower_rows),
        duals_upper: pick(&upper_rows),
        iterations: sol.iterations,
    })
}
