//! Dense primal active-set method with bounded variables.
//!
//! Working set = all equality rows + active inequality rows + variables
//! fixed at a bound. Each iteration solves the equality-constrained
//! subproblem on the free variables through a symmetric eigendecomposition
//! of the KKT matrix:
//!
//! ```text
//! [ H_NN  A_Wᵀ ] [ p ]   [ -g_N ]
//! [ A_W    0   ] [ ν ] = [  0   ]
//! ```
//!
//! A consistent system yields a step `p` (minimum norm when singular). An
//! inconsistent one means the reduced Hessian is singular and the
//! least-squares residual lies in the KKT null space; its primal part is a
//! zero-curvature descent ray, which is followed until a constraint blocks
//! it or reported as unbounded. With a zero Hessian the method walks
//! vertex to vertex like the simplex method.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use super::{dot, ActiveConstraint, QpProblem, QpSolution, QpStatus, SolverError, FEAS_TOL, PIVOT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Always release the lowest-indexed violating constraint.
    Bland,
    /// Release the most violating constraint; switch to Bland's rule while
    /// steps stay degenerate.
    DantzigWithBlandFallback,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub pivot_rule: PivotRule,
    pub max_iterations: Option<usize>,
    /// Log the final working set and KKT residuals at debug level.
    pub debug: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { pivot_rule: PivotRule::DantzigWithBlandFallback, max_iterations: None, debug: false }
    }
}

/// Solves a convex QP. Infeasibility and unboundedness are reported through
/// [`QpSolution::status`]; `Err` is reserved for malformed input and
/// numerical breakdown.
pub fn solve_qp(p: &QpProblem, opts: &SolveOptions) -> Result<QpSolution, SolverError> {
    p.validate()?;
    let n = p.num_vars();
    let max_iter = opts.max_iterations.unwrap_or(100 * (n + p.eq_constraints.len() + p.ineq_constraints.len()) + 1000);

    let start = match phase_one(p, opts, max_iter)? {
        PhaseOne::Infeasible(iters) => return Ok(QpSolution::non_optimal(QpStatus::Infeasible, p, iters)),
        PhaseOne::Feasible(state) => state,
    };
    let mut engine = Engine::new(p, start, opts.pivot_rule);
    let used = engine.iterations;
    match engine.run(max_iter + used)? {
        Outcome::Optimal => {}
        Outcome::Unbounded => {
            return Ok(QpSolution::non_optimal(QpStatus::Unbounded, p, engine.iterations));
        }
    }
    let sol = engine.finish()?;
    if opts.debug {
        log::debug!(
            "active set after {} iterations: {:?}; residuals {:?}",
            sol.iterations,
            sol.active_set,
            sol.residuals
        );
    }
    Ok(sol)
}

/// Solves a linear program through the same machinery. Rejects problems
/// with a nonzero quadratic term.
pub fn solve_lp(p: &QpProblem, opts: &SolveOptions) -> Result<QpSolution, SolverError> {
    if !p.is_linear() {
        return Err(SolverError::NotLinear);
    }
    solve_qp(p, opts)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VarState {
    Free,
    AtLower,
    AtUpper,
}

#[derive(Clone, Debug)]
struct State {
    x: Vec<f64>,
    vars: Vec<VarState>,
    active: Vec<bool>,
    iterations: usize,
}

enum PhaseOne {
    Feasible(State),
    Infeasible(usize),
}

enum Outcome {
    Optimal,
    Unbounded,
}

enum Eqp {
    Step { p: Vec<f64>, nu: Vec<f64> },
    Ray { d: Vec<f64> },
}

#[derive(Clone, Copy, Debug)]
enum Blocker {
    Lower(usize),
    Upper(usize),
    Row(usize),
}

fn initial_point(p: &QpProblem) -> (Vec<f64>, Vec<VarState>) {
    let n = p.num_vars();
    let mut x = vec![0.0; n];
    let mut vars = vec![VarState::Free; n];
    for j in 0..n {
        let (l, u) = (p.lower[j], p.upper[j]);
        if l.is_finite() && 0.0 <= l {
            x[j] = l;
            vars[j] = VarState::AtLower;
        } else if u.is_finite() && 0.0 >= u {
            x[j] = u;
            vars[j] = VarState::AtUpper;
        }
    }
    (x, vars)
}

/// Minimizes the sum of artificial infeasibilities from the clipped origin.
fn phase_one(p: &QpProblem, opts: &SolveOptions, max_iter: usize) -> Result<PhaseOne, SolverError> {
    let n = p.num_vars();
    let (x0, vars0) = initial_point(p);

    let eq_res: Vec<f64> = p.eq_constraints.iter().map(|r| r.rhs - dot(&r.coeffs, &x0)).collect();
    let in_viol: Vec<f64> = p.ineq_constraints.iter().map(|r| dot(&r.coeffs, &x0) - r.rhs).collect();
    let rhs_scale = 1.0 + p.eq_constraints.iter().chain(&p.ineq_constraints).fold(0.0f64, |m, r| m.max(r.rhs.abs()));

    let needs_eq_art = eq_res.iter().any(|r| r.abs() > 0.0);
    let violated: Vec<usize> = (0..in_viol.len()).filter(|&i| in_viol[i] > 0.0).collect();
    if !needs_eq_art && violated.is_empty() {
        return Ok(PhaseOne::Feasible(State {
            x: x0,
            vars: vars0,
            active: vec![false; p.ineq_constraints.len()],
            iterations: 0,
        }));
    }

    // One artificial per equality row, one per violated inequality row.
    let n_art = p.eq_constraints.len() + violated.len();
    let n1 = n + n_art;
    let mut aux = QpProblem::new(n1);
    for j in 0..n {
        aux.set_bounds(j, p.lower[j], p.upper[j]);
    }
    let mut x1 = x0.clone();
    x1.resize(n1, 0.0);
    let mut vars1 = vars0.clone();
    vars1.resize(n1, VarState::Free);
    for (i, row) in p.eq_constraints.iter().enumerate() {
        let a = n + i;
        let mut coeffs = row.coeffs.clone();
        coeffs.resize(n1, 0.0);
        coeffs[a] = if eq_res[i] >= 0.0 { 1.0 } else { -1.0 };
        aux.eq_constraints.push(super::Constraint { coeffs, rhs: row.rhs });
        aux.set_bounds(a, 0.0, f64::INFINITY);
        aux.linear[a] = 1.0;
        x1[a] = eq_res[i].abs();
    }
    let mut active1 = vec![false; p.ineq_constraints.len()];
    let mut art_of_row = vec![None; p.ineq_constraints.len()];
    for (k, &i) in violated.iter().enumerate() {
        art_of_row[i] = Some(n + p.eq_constraints.len() + k);
    }
    for (i, row) in p.ineq_constraints.iter().enumerate() {
        let mut coeffs = row.coeffs.clone();
        coeffs.resize(n1, 0.0);
        if let Some(a) = art_of_row[i] {
            coeffs[a] = -1.0;
            aux.set_bounds(a, 0.0, f64::INFINITY);
            aux.linear[a] = 1.0;
            x1[a] = in_viol[i];
            active1[i] = true;
        }
        aux.ineq_constraints.push(super::Constraint { coeffs, rhs: row.rhs });
    }

    let mut engine = Engine::new(&aux, State { x: x1, vars: vars1, active: active1, iterations: 0 }, opts.pivot_rule);
    match engine.run(max_iter)? {
        Outcome::Optimal => {}
        Outcome::Unbounded => {
            return Err(SolverError::Numerical("phase one reported unbounded".into()));
        }
    }
    let infeasibility: f64 = engine.x[n..].iter().sum();
    if infeasibility > 1e-9 * rhs_scale {
        return Ok(PhaseOne::Infeasible(engine.iterations));
    }
    let mut x = engine.x;
    x.truncate(n);
    let mut vars = engine.vars;
    vars.truncate(n);
    Ok(PhaseOne::Feasible(State { x, vars, active: engine.active, iterations: engine.iterations }))
}

struct Engine<'a> {
    p: &'a QpProblem,
    x: Vec<f64>,
    grad: Vec<f64>,
    vars: Vec<VarState>,
    active: Vec<bool>,
    row_vals: Vec<f64>,
    row_norms: Vec<f64>,
    eq_norms: Vec<f64>,
    zero_hessian: bool,
    rule: PivotRule,
    iterations: usize,
    degenerate_streak: usize,
    /// Working sets seen at release points; a repeat means the method is
    /// looping and Bland's rule takes over for good.
    seen: HashSet<u64>,
    stalled: bool,
}

impl<'a> Engine<'a> {
    fn new(p: &'a QpProblem, s: State, rule: PivotRule) -> Self {
        let n = p.num_vars();
        let zero_hessian = p.is_linear();
        let mut grad = p.linear.clone();
        if !zero_hessian {
            for j in 0..n {
                if s.x[j] != 0.0 {
                    let col = p.quadratic.column(j);
                    for i in 0..n {
                        grad[i] += col[i] * s.x[j];
                    }
                }
            }
        }
        let row_vals = p.ineq_constraints.iter().map(|r| dot(&r.coeffs, &s.x)).collect();
        let row_norms =
            p.ineq_constraints.iter().map(|r| r.coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        let eq_norms = p.eq_constraints.iter().map(|r| r.coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        Self {
            p,
            x: s.x,
            grad,
            vars: s.vars,
            active: s.active,
            row_vals,
            row_norms,
            eq_norms,
            zero_hessian,
            rule,
            iterations: s.iterations,
            degenerate_streak: 0,
            seen: HashSet::new(),
            stalled: false,
        }
    }

    fn free_vars(&self) -> Vec<usize> {
        (0..self.x.len()).filter(|&j| self.vars[j] == VarState::Free).collect()
    }

    /// Working-set rows: equalities first, then active inequalities by index.
    fn working_rows(&self) -> Vec<&'a super::Constraint> {
        let p = self.p;
        p.eq_constraints
            .iter()
            .chain(p.ineq_constraints.iter().enumerate().filter(|(i, _)| self.active[*i]).map(|(_, r)| r))
            .collect()
    }

    /// Row scale factors matching [`Self::working_rows`]; rows enter the
    /// KKT system normalized to unit max-coefficient.
    fn working_scales(&self) -> Vec<f64> {
        let inv = |v: f64| if v > 0.0 { 1.0 / v } else { 1.0 };
        self.eq_norms
            .iter()
            .map(|&v| inv(v))
            .chain(self.active_rows().into_iter().map(|i| inv(self.row_norms[i])))
            .collect()
    }

    /// Scaled residuals `s·(b − a·x)` of the working rows.
    fn working_residuals(&self, rows: &[&super::Constraint], scales: &[f64]) -> Vec<f64> {
        rows.iter().zip(scales).map(|(r, s)| s * (r.rhs - dot(&r.coeffs, &self.x))).collect()
    }

    fn active_rows(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    fn kkt_matrix(&self, free: &[usize], rows: &[&super::Constraint], scales: &[f64]) -> DMatrix<f64> {
        let nf = free.len();
        let s = nf + rows.len();
        let mut k = DMatrix::zeros(s, s);
        if !self.zero_hessian {
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    k[(a, b)] = self.p.quadratic[(i, j)];
                }
            }
        }
        for (w, row) in rows.iter().enumerate() {
            for (a, &j) in free.iter().enumerate() {
                let v = row.coeffs[j] * scales[w];
                k[(nf + w, a)] = v;
                k[(a, nf + w)] = v;
            }
        }
        k
    }

    /// Solves `K z = rhs` in the least-squares sense. Also returns the
    /// projection of `rhs` onto the null space of `K`.
    fn kkt_solve(k: DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
        let s = rhs.len();
        if s == 0 {
            return Ok((DVector::zeros(0), DVector::zeros(0)));
        }
        let kc = k.clone();
        let eig = nalgebra::linalg::SymmetricEigen::new(k);
        let lmax = eig.eigenvalues.amax();
        if lmax == 0.0 {
            return Ok((DVector::zeros(s), rhs.clone()));
        }
        let eps = PIVOT_TOL * lmax * (s as f64).max(1.0);
        let q = &eig.eigenvectors;
        let pinv = |b: &DVector<f64>| {
            let mut c = q.tr_mul(b);
            for (ci, &l) in c.iter_mut().zip(eig.eigenvalues.iter()) {
                *ci = if l.abs() > eps { *ci / l } else { 0.0 };
            }
            q * c
        };
        let mut z = pinv(rhs);
        // Iterative refinement; null-space components of the residual are
        // invisible to the pseudo-inverse and stay put.
        for _ in 0..3 {
            let r = rhs - &kc * &z;
            z += pinv(&r);
        }
        let mut null = DVector::zeros(s);
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l.abs() <= eps {
                let v = q.column(k);
                null += v * v.dot(rhs);
            }
        }
        Ok((z, null))
    }

    fn solve_eqp(&self) -> Result<Eqp, SolverError> {
        let n = self.x.len();
        let free = self.free_vars();
        let rows = self.working_rows();
        let scales = self.working_scales();
        let nf = free.len();
        let k = self.kkt_matrix(&free, &rows, &scales);
        let mut rhs = DVector::zeros(nf + rows.len());
        for (a, &j) in free.iter().enumerate() {
            rhs[a] = -self.grad[j];
        }
        // Feeding the row residuals back keeps round-off from accumulating
        // across iterations.
        for (w, v) in self.working_residuals(&rows, &scales).into_iter().enumerate() {
            rhs[nf + w] = v;
        }
        let (z, r) = Self::kkt_solve(k, &rhs)?;
        let rhs_norm = rhs.amax();
        let res_norm = r.amax();
        if res_norm > 1e-9 * (1.0 + rhs_norm) {
            let mut d = vec![0.0; n];
            let dmax = (0..nf).fold(0.0f64, |m, a| m.max(r[a].abs()));
            if dmax > 0.0 {
                for (a, &j) in free.iter().enumerate() {
                    d[j] = r[a] / dmax;
                }
                if dot(&d, &self.grad) < 0.0 {
                    return Ok(Eqp::Ray { d });
                }
            }
        }
        let mut p = vec![0.0; n];
        for (a, &j) in free.iter().enumerate() {
            p[j] = z[a];
        }
        let nu = (0..rows.len()).map(|w| z[nf + w] * scales[w]).collect();
        Ok(Eqp::Step { p, nu })
    }

    /// Largest feasible step along `dir`, capped at `max_step`. Ties go to
    /// the lowest index (variables before rows).
    fn ratio_test(&self, dir: &[f64], max_step: f64) -> (f64, Option<Blocker>) {
        let n = self.x.len();
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = 1e-12 * dmax;
        let mut cands: Vec<(f64, Blocker)> = Vec::new();
        for j in 0..n {
            if self.vars[j] != VarState::Free {
                continue;
            }
            let dj = dir[j];
            if dj < -tiny && self.p.lower[j].is_finite() {
                cands.push(((self.x[j] - self.p.lower[j]) / -dj, Blocker::Lower(j)));
            } else if dj > tiny && self.p.upper[j].is_finite() {
                cands.push(((self.p.upper[j] - self.x[j]) / dj, Blocker::Upper(j)));
            }
        }
        for (i, row) in self.p.ineq_constraints.iter().enumerate() {
            if self.active[i] {
                continue;
            }
            let gd: f64 = (0..n).filter(|&j| dir[j] != 0.0).map(|j| row.coeffs[j] * dir[j]).sum();
            if gd > 1e-12 * self.row_norms[i] * dmax {
                cands.push(((row.rhs - self.row_vals[i]) / gd, Blocker::Row(i)));
            }
        }
        let key = |b: &Blocker| match *b {
            Blocker::Lower(j) | Blocker::Upper(j) => j,
            Blocker::Row(i) => n + i,
        };
        loop {
            let amin = cands.iter().fold(max_step, |m, c| m.min(c.0.max(0.0)));
            if amin >= max_step && cands.iter().all(|c| c.0.max(0.0) > max_step) {
                return (max_step, None);
            }
            let tie = 1e-12 * (1.0 + amin.abs());
            let (pos, chosen) = cands
                .iter()
                .enumerate()
                .filter(|(_, c)| c.0.max(0.0) <= amin + tie)
                .min_by_key(|(_, c)| key(&c.1))
                .map(|(p, c)| (p, c.1))
                .expect("a candidate attains the minimum");
            // A row spanned by the working set cannot block a direction in
            // its null space; any positive rate is round-off.
            if let Blocker::Row(i) = chosen {
                if self.row_dependent(i) {
                    cands.swap_remove(pos);
                    continue;
                }
            }
            return (amin, Some(chosen));
        }
    }

    /// Whether row `i`, restricted to the free variables, lies in the span
    /// of the working rows.
    fn row_dependent(&self, i: usize) -> bool {
        let free = self.free_vars();
        let a = DVector::from_iterator(free.len(), free.iter().map(|&j| self.p.ineq_constraints[i].coeffs[j]));
        let an = a.norm();
        if an == 0.0 {
            return true;
        }
        let rows = self.working_rows();
        if rows.is_empty() {
            return false;
        }
        let scales = self.working_scales();
        let m = DMatrix::from_fn(free.len(), rows.len(), |a, w| rows[w].coeffs[free[a]] * scales[w]);
        let svd = m.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.amax();
        let tol = 1e-10 * smax * free.len().max(rows.len()) as f64;
        let mut rest = a.clone();
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv > tol {
                let col = u.column(k);
                rest -= col * col.dot(&a);
            }
        }
        rest.norm() <= 1e-9 * an
    }

    fn take_step(&mut self, dir: &[f64], alpha: f64) {
        let n = self.x.len();
        if alpha == 0.0 {
            return;
        }
        for j in 0..n {
            if dir[j] != 0.0 {
                self.x[j] += alpha * dir[j];
                if !self.zero_hessian {
                    let col = self.p.quadratic.column(j);
                    for i in 0..n {
                        self.grad[i] += alpha * col[i] * dir[j];
                    }
                }
            }
        }
        for (i, row) in self.p.ineq_constraints.iter().enumerate() {
            let gd: f64 = (0..n).filter(|&j| dir[j] != 0.0).map(|j| row.coeffs[j] * dir[j]).sum();
            self.row_vals[i] += alpha * gd;
        }
    }

    fn block(&mut self, b: Blocker) {
        match b {
            Blocker::Lower(j) => {
                self.x[j] = self.p.lower[j];
                self.vars[j] = VarState::AtLower;
            }
            Blocker::Upper(j) => {
                self.x[j] = self.p.upper[j];
                self.vars[j] = VarState::AtUpper;
            }
            Blocker::Row(i) => self.active[i] = true,
        }
    }

    fn reduced_costs(&self, nu: &[f64]) -> Vec<f64> {
        let rows = self.working_rows();
        let mut r = self.grad.clone();
        for (w, row) in rows.iter().enumerate() {
            if nu[w] != 0.0 {
                for (j, rj) in r.iter_mut().enumerate() {
                    *rj += nu[w] * row.coeffs[j];
                }
            }
        }
        r
    }

    /// Picks a working-set member whose multiplier has the wrong sign.
    fn pick_release(&self, nu: &[f64]) -> Option<(usize, f64)> {
        let n = self.x.len();
        let scale = 1.0 + self.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-10 * scale;
        let r = self.reduced_costs(nu);
        let mut cands: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            if self.p.lower[j] == self.p.upper[j] {
                continue;
            }
            match self.vars[j] {
                VarState::AtLower if r[j] < -tol => cands.push((j, -r[j])),
                VarState::AtUpper if r[j] > tol => cands.push((j, r[j])),
                _ => {}
            }
        }
        let n_eq = self.p.eq_constraints.len();
        for (w, i) in self.active_rows().into_iter().enumerate() {
            let v = nu[n_eq + w];
            if v < -tol {
                cands.push((n + i, -v));
            }
        }
        let bland = self.rule == PivotRule::Bland || self.stalled || self.degenerate_streak >= 3;
        if bland {
            cands.into_iter().min_by_key(|c| c.0)
        } else {
            cands.into_iter().fold(None, |best: Option<(usize, f64)>, c| match best {
                Some(b) if b.1 >= c.1 => Some(b),
                _ => Some(c),
            })
        }
    }

    fn release(&mut self, key: usize) {
        let n = self.x.len();
        if key < n {
            self.vars[key] = VarState::Free;
        } else {
            self.active[key - n] = false;
        }
    }

    fn run(&mut self, max_iter: usize) -> Result<Outcome, SolverError> {
        loop {
            if self.iterations >= max_iter {
                return Err(SolverError::IterationLimit(max_iter));
            }
            self.iterations += 1;
            let eqp = self.solve_eqp()?;
            if log::log_enabled!(log::Level::Trace) {
                match &eqp {
                    Eqp::Ray { d } => log::trace!("it {} ray {:?}", self.iterations, d),
                    Eqp::Step { p, .. } => log::trace!("it {} step {:?}", self.iterations, p),
                }
            }
            match eqp {
                Eqp::Ray { d } => {
                    let (alpha, blocker) = self.ratio_test(&d, f64::INFINITY);
                    match blocker {
                        None => return Ok(Outcome::Unbounded),
                        Some(b) => {
                            self.note_step(alpha);
                            self.take_step(&d, alpha);
                            self.block(b);
                        }
                    }
                }
                Eqp::Step { p, nu } => {
                    let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let xmax = self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if pmax <= 1e-9 * (1.0 + xmax) {
                        if !self.seen.insert(self.signature()) && !self.stalled {
                            log::debug!("working set repeated at iteration {}; using Bland's rule", self.iterations);
                            self.stalled = true;
                            self.seen.clear();
                        }
                        match self.pick_release(&nu) {
                            None => return Ok(Outcome::Optimal),
                            Some((key, _)) => self.release(key),
                        }
                    } else {
                        let (alpha, blocker) = self.ratio_test(&p, 1.0);
                        self.note_step(alpha * pmax);
                        self.take_step(&p, alpha);
                        if let Some(b) = blocker {
                            if alpha < 1.0 {
                                self.block(b);
                            }
                        }
                    }
                }
            }
        }
    }

    fn signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in &self.vars {
            (*v as u8).hash(&mut h);
        }
        self.active.hash(&mut h);
        h.finish()
    }

    fn note_step(&mut self, length: f64) {
        if length <= 1e-14 {
            self.degenerate_streak += 1;
        } else {
            self.degenerate_streak = 0;
        }
    }

    /// One Newton correction on the final working set, then multipliers.
    fn finish(mut self) -> Result<QpSolution, SolverError> {
        let p = self.p;
        let n = self.x.len();
        let free = self.free_vars();
        let rows = self.working_rows();
        let scales = self.working_scales();
        let nf = free.len();
        let k = self.kkt_matrix(&free, &rows, &scales);
        let mut rhs = DVector::zeros(nf + rows.len());
        for (a, &j) in free.iter().enumerate() {
            rhs[a] = -self.grad[j];
        }
        for (w, v) in self.working_residuals(&rows, &scales).into_iter().enumerate() {
            rhs[nf + w] = v;
        }
        let (z, _) = Self::kkt_solve(k, &rhs)?;
        let mut delta = vec![0.0; n];
        for (a, &j) in free.iter().enumerate() {
            delta[j] = z[a];
        }
        let dmax = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xmax = self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Only accept corrections at rounding scale; a larger one would
        // indicate a flat optimal face where the current vertex is preferred.
        if dmax <= 1e-6 * (1.0 + xmax) {
            self.take_step(&delta, 1.0);
        }
        let nu: Vec<f64> = (0..rows.len()).map(|w| z[nf + w] * scales[w]).collect();
        // Recompute multipliers at the corrected point.
        let nu = match self.solve_eqp()? {
            Eqp::Step { nu: nu2, .. } => nu2,
            Eqp::Ray { .. } => nu,
        };
        let r = self.reduced_costs(&nu);
        let n_eq = p.eq_constraints.len();
        let mut duals_ineq = vec![0.0; p.ineq_constraints.len()];
        let mut active_set = Vec::new();
        for (w, i) in self.active_rows().into_iter().enumerate() {
            duals_ineq[i] = nu[n_eq + w];
            active_set.push(ActiveConstraint::Inequality(i));
        }
        let mut duals_lower = vec![0.0; n];
        let mut duals_upper = vec![0.0; n];
        for j in 0..n {
            match self.vars[j] {
                VarState::Free => {}
                VarState::AtLower => {
                    active_set.push(ActiveConstraint::Lower(j));
                    if p.lower[j] == p.upper[j] {
                        duals_lower[j] = r[j].max(0.0);
                        duals_upper[j] = (-r[j]).max(0.0);
                    } else {
                        duals_lower[j] = r[j];
                    }
                }
                VarState::AtUpper => {
                    active_set.push(ActiveConstraint::Upper(j));
                    duals_upper[j] = -r[j];
                }
            }
        }
        for j in 0..n {
            if self.vars[j] == VarState::Free {
                self.x[j] = self.x[j].clamp(p.lower[j], p.upper[j]);
            }
        }
        let mut sol = QpSolution {
            status: QpStatus::Optimal,
            objective: p.objective(&self.x),
            primal: self.x,
            duals_eq: nu[..n_eq].to_vec(),
            duals_ineq,
            duals_lower,
            duals_upper,
            iterations: self.iterations,
            active_set,
            residuals: Default::default(),
        };
        sol.residuals = p.kkt_residuals(&sol);
        if sol.residuals.primal_feasibility > 1e3 * FEAS_TOL * (1.0 + xmax) {
            return Err(SolverError::Numerical(format!(
                "final point violates constraints by {:.3e}",
                sol.residuals.primal_feasibility
            )));
        }
        Ok(sol)
    }
}
