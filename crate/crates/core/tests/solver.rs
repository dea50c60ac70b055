#![allow(clippy::needless_range_loop)]

use evbid::solver::sparse::{solve_sparse, SparseQp};
use evbid::solver::{solve_lp, solve_qp, PivotRule, QpProblem, QpStatus, SolveOptions, SolverError};
use proptest::prelude::*;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

#[test]
fn projection_onto_halfspace() {
    // min (x-1)^2 + (y-2)^2  s.t. x + y <= 2
    let mut p = QpProblem::new(2);
    p.add_diag(0, 2.0);
    p.add_diag(1, 2.0);
    p.linear = vec![-2.0, -4.0];
    p.constant = 5.0;
    p.add_ineq(&[(0, 1.0), (1, 1.0)], 2.0);
    let s = solve_qp(&p, &opts()).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert!((s.primal[0] - 0.5).abs() < 1e-10);
    assert!((s.primal[1] - 1.5).abs() < 1e-10);
    assert!((s.duals_ineq[0] - 1.0).abs() < 1e-10);
    assert!((s.objective - 0.5).abs() < 1e-10);
    assert!(s.residuals.within_tolerance(&p));
}

#[test]
fn bounded_lp_vertex_and_duals() {
    // max 3x + 2y  s.t. x + y <= 4, x + 3y <= 6, 0 <= x <= 3, y >= 0
    let mut p = QpProblem::new(2);
    p.linear = vec![-3.0, -2.0];
    p.set_bounds(0, 0.0, 3.0);
    p.set_bounds(1, 0.0, f64::INFINITY);
    p.add_ineq(&[(0, 1.0), (1, 1.0)], 4.0);
    p.add_ineq(&[(0, 1.0), (1, 3.0)], 6.0);
    let s = solve_lp(&p, &opts()).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert!((s.primal[0] - 3.0).abs() < 1e-10 && (s.primal[1] - 1.0).abs() < 1e-10);
    assert!((s.objective + 11.0).abs() < 1e-10);
    // y is priced by row 0 at 2, x's upper bound carries the remaining 1.
    assert!((s.duals_ineq[0] - 2.0).abs() < 1e-10);
    assert!(s.duals_ineq[1].abs() < 1e-10);
    assert!((s.duals_upper[0] - 1.0).abs() < 1e-10);
}

#[test]
fn equality_dual_sign() {
    // min x^2 + y^2  s.t. x + y = 2 ; grad + nu*(1,1) = 0 at (1,1) gives nu = -2
    let mut p = QpProblem::new(2);
    p.add_diag(0, 2.0);
    p.add_diag(1, 2.0);
    p.add_eq(&[(0, 1.0), (1, 1.0)], 2.0);
    let s = solve_qp(&p, &opts()).unwrap();
    assert!((s.primal[0] - 1.0).abs() < 1e-10);
    assert!((s.duals_eq[0] + 2.0).abs() < 1e-10);
}

#[test]
fn infeasible_is_reported() {
    let mut p = QpProblem::new(1);
    p.set_bounds(0, 0.0, 1.0);
    p.add_ineq(&[(0, -1.0)], -2.0);
    assert_eq!(solve_lp(&p, &opts()).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn unbounded_is_reported() {
    let mut p = QpProblem::new(2);
    p.linear = vec![-1.0, 0.0];
    p.add_diag(1, 1.0);
    p.set_bounds(0, 0.0, f64::INFINITY);
    assert_eq!(solve_qp(&p, &opts()).unwrap().status, QpStatus::Unbounded);
}

#[test]
fn lp_rejects_quadratic() {
    let mut p = QpProblem::new(1);
    p.add_diag(0, 1.0);
    assert_eq!(solve_lp(&p, &opts()).unwrap_err(), SolverError::NotLinear);
}

#[test]
fn nonconvex_rejected() {
    let mut p = QpProblem::new(1);
    p.add_diag(0, -1.0);
    assert!(matches!(solve_qp(&p, &opts()), Err(SolverError::NotConvex(_))));
}

#[test]
fn beale_cycling_example_terminates() {
    // Classic LP that cycles under the textbook largest-coefficient rule.
    let mut p = QpProblem::new(4);
    p.linear = vec![-0.75, 150.0, -0.02, 6.0];
    for j in 0..4 {
        p.set_bounds(j, 0.0, f64::INFINITY);
    }
    p.add_ineq(&[(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], 0.0);
    p.add_ineq(&[(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], 0.0);
    p.add_ineq(&[(2, 1.0)], 1.0);
    for rule in [PivotRule::Bland, PivotRule::DantzigWithBlandFallback] {
        let s = solve_lp(&p, &SolveOptions { pivot_rule: rule, ..opts() }).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-9, "{rule:?}: {}", s.objective);
    }
}

#[test]
fn redundant_equalities() {
    let mut p = QpProblem::new(2);
    p.linear = vec![1.0, 2.0];
    p.set_bounds(0, 0.0, 10.0);
    p.set_bounds(1, 0.0, 10.0);
    p.add_eq(&[(0, 1.0), (1, 1.0)], 3.0);
    p.add_eq(&[(0, 2.0), (1, 2.0)], 6.0);
    let s = solve_lp(&p, &opts()).unwrap();
    assert!((s.primal[0] - 3.0).abs() < 1e-9 && s.primal[1].abs() < 1e-9);
    assert!(s.residuals.within_tolerance(&p), "{:?}", s.residuals);
}

#[test]
fn fixed_variable_duals_split() {
    let mut p = QpProblem::new(1);
    p.linear = vec![-4.0];
    p.set_bounds(0, 2.0, 2.0);
    let s = solve_lp(&p, &opts()).unwrap();
    assert_eq!(s.primal[0], 2.0);
    assert!((s.duals_upper[0] - 4.0).abs() < 1e-12 && s.duals_lower[0] == 0.0);
}

#[test]
fn sparse_matches_dense_on_fixture() {
    let mut p = QpProblem::new(2);
    p.add_diag(0, 2.0);
    p.add_diag(1, 2.0);
    p.linear = vec![-2.0, -4.0];
    p.add_ineq(&[(0, 1.0), (1, 1.0)], 2.0);
    let s = solve_sparse(&SparseQp::from(&p), 1e-10).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert!((s.primal[0] - 0.5).abs() < 1e-6);
    assert!((s.duals_ineq[0] - 1.0).abs() < 1e-6);
}

#[test]
fn sparse_statuses() {
    let mut p = SparseQp::new(1);
    p.lower = vec![0.0];
    p.upper = vec![1.0];
    p.add_ineq(vec![(0, -1.0)], -2.0);
    assert_eq!(solve_sparse(&p, 1e-9).unwrap().status, QpStatus::Infeasible);
    let mut q = SparseQp::new(1);
    q.linear = vec![-1.0];
    q.lower = vec![0.0];
    assert_eq!(solve_sparse(&q, 1e-9).unwrap().status, QpStatus::Unbounded);
}

/// Random feasible convex QP: H = LᵀL (possibly rank deficient), rows built
/// around a known feasible point.
fn random_problem() -> impl Strategy<Value = QpProblem> {
    (2usize..7, 0usize..3, 0usize..6, 0usize..4, any::<u64>()).prop_map(|(n, m_eq, m_in, rank, seed)| {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = QpProblem::new(n);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rank = rank.min(n);
        for _ in 0..rank {
            let l: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in 0..n {
                for j in 0..n {
                    p.quadratic[(i, j)] += l[i] * l[j];
                }
            }
        }
        p.linear = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        for j in 0..n {
            p.set_bounds(j, x0[j] - rng.random_range(0.0..3.0), x0[j] + rng.random_range(0.0..3.0));
        }
        for _ in 0..m_eq.min(n - 1) {
            let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
            let rhs = row.iter().map(|(j, v)| v * x0[*j]).sum();
            p.add_eq(&row, rhs);
        }
        for _ in 0..m_in {
            let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
            let rhs = row.iter().map(|(j, v)| v * x0[*j]).sum::<f64>() + rng.random_range(0.0..1.0);
            p.add_ineq(&row, rhs);
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn active_set_agrees_with_interior_point(p in random_problem()) {
        let dense = solve_qp(&p, &opts()).unwrap();
        prop_assert_eq!(dense.status, QpStatus::Optimal);
        prop_assert!(dense.residuals.within_tolerance(&p), "{:?}", dense.residuals);
        let ip = solve_sparse(&SparseQp::from(&p), 1e-10).unwrap();
        prop_assert_eq!(ip.status, QpStatus::Optimal);
        let scale = 1.0 + dense.objective.abs();
        prop_assert!((dense.objective - ip.objective).abs() <= 1e-6 * scale,
            "dense {} vs ip {}", dense.objective, ip.objective);
    }

    #[test]
    fn bland_and_dantzig_reach_same_optimum(p in random_problem()) {
        let a = solve_qp(&p, &opts()).unwrap();
        let b = solve_qp(&p, &SolveOptions { pivot_rule: PivotRule::Bland, ..opts() }).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + a.objective.abs()));
    }
}

/// Clearing-shaped problem: a few quadratic generators, many convex-weight
/// variables per bidder, and rows whose coefficients span three orders of
/// magnitude.
fn clearing_like() -> impl Strategy<Value = QpProblem> {
    (1usize..4, 1usize..4, 5usize..120, any::<u64>()).prop_map(|(ng, nk, m, seed)| {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = ng + nk * m;
        let mut p = QpProblem::new(n);
        let demand = rng.random_range(500.0..3000.0);
        for i in 0..ng {
            p.set_bounds(i, 0.0, 4000.0);
            p.add_diag(i, 2.0 * rng.random_range(0.0005..0.01));
            p.linear[i] = rng.random_range(15.0..25.0);
        }
        let mut balance: Vec<(usize, f64)> = (0..ng).map(|i| (i, -1.0)).collect();
        let mut lines: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2];
        let shift: Vec<Vec<f64>> =
            (0..2).map(|_| (0..ng + nk).map(|_| rng.random_range(-0.7..0.7)).collect()).collect();
        for (l, row) in lines.iter_mut().enumerate() {
            row.extend((0..ng).map(|i| (i, shift[l][i])));
        }
        for k in 0..nk {
            let cap = rng.random_range(50.0..3000.0);
            let (c1, c2) = (rng.random_range(20.0..60.0), rng.random_range(0.001..0.05));
            let mut weights = Vec::new();
            for j in 0..m {
                let v = ng + k * m + j;
                let x = cap * j as f64 / (m - 1) as f64;
                p.set_bounds(v, 0.0, f64::INFINITY);
                p.linear[v] = -(c1 * x - c2 * x * x);
                weights.push((v, 1.0));
                balance.push((v, x));
                for (l, row) in lines.iter_mut().enumerate() {
                    row.push((v, -shift[l][ng + k] * x));
                }
            }
            p.add_eq(&weights, 1.0);
        }
        p.add_eq(&balance, -demand);
        // Limits loose enough for the all-idle dispatch to be feasible.
        let flow0: Vec<f64> = (0..2).map(|l| (0..ng).map(|i| shift[l][i] * demand / ng as f64).sum()).collect();
        for (l, row) in lines.into_iter().enumerate() {
            let limit = flow0[l].abs() + rng.random_range(10.0..1000.0);
            let neg: Vec<(usize, f64)> = row.iter().map(|&(j, c)| (j, -c)).collect();
            p.add_ineq(&row, limit);
            p.add_ineq(&neg, limit);
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn badly_scaled_rows_stay_feasible(p in clearing_like()) {
        for rule in [PivotRule::DantzigWithBlandFallback, PivotRule::Bland] {
            let dense = solve_qp(&p, &SolveOptions { pivot_rule: rule, ..opts() }).unwrap();
            prop_assert_eq!(dense.status, QpStatus::Optimal);
            prop_assert!(dense.residuals.primal_feasibility <= 1e-6, "{:?}", dense.residuals);
            // The interior-point oracle occasionally stalls on these; the
            // feasibility check above still applies then.
            if let Ok(ip) = solve_sparse(&SparseQp::from(&p), 1e-10) {
                let scale = 1.0 + dense.objective.abs();
                prop_assert!((dense.objective - ip.objective).abs() <= 1e-6 * scale,
                    "{rule:?}: dense {} vs ip {}", dense.objective, ip.objective);
            }
        }
    }
}

fn load_fixture(name: &str) -> QpProblem {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let vec = |v: &serde_json::Value| -> Vec<f64> {
        v.as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .map(|x| if x.abs() >= 1e300 { x.signum() * f64::INFINITY } else { x })
            .collect()
    };
    let c = vec(&v["c"]);
    let mut p = QpProblem::new(c.len());
    p.linear = c;
    for (i, row) in v["h"].as_array().unwrap().iter().enumerate() {
        for (j, x) in vec(row).into_iter().enumerate() {
            p.quadratic[(i, j)] = x;
        }
    }
    p.lower = vec(&v["lo"]);
    p.upper = vec(&v["hi"]);
    let rows = |key: &str| -> Vec<(Vec<(usize, f64)>, f64)> {
        v[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| (vec(&r[0]).into_iter().enumerate().filter(|x| x.1 != 0.0).collect(), r[1].as_f64().unwrap()))
            .collect()
    };
    for (t, b) in rows("eq") {
        p.add_eq(&t, b);
    }
    for (t, b) in rows("ineq") {
        p.add_ineq(&t, b);
    }
    p
}

#[test]
fn piecewise_epigraph_does_not_cycle() {
    let p = load_fixture("epigraph_cycle.json");
    for rule in [PivotRule::Bland, PivotRule::DantzigWithBlandFallback] {
        let sol = solve_qp(&p, &SolveOptions { pivot_rule: rule, ..opts() }).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.residuals.primal_feasibility <= 1e-6, "{rule:?}: {:?}", sol.residuals);
    }
}
