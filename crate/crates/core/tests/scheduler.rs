use evbid::scheduler::*;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes the per-group objective over a uniform grid of `[0, cap]`.
fn grid_argmin(price: f64, backlog: f64, cap: f64, v: f64, steps: usize) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=steps {
        let x = cap * i as f64 / steps as f64;
        let f = p2_objective(x, price, backlog, v);
        if f < best.0 {
            best = (f, x);
        }
    }
    best.1
}

#[test]
fn queue_update_examples() {
    assert_eq!(update_q(0.0, 3.0, 0.0), 0.0);
    assert_eq!(update_q(5.0, 2.0, 1.0), 4.0);
    assert_eq!(update_q(1.0, 3.0, 2.0), 2.0);

    assert_eq!(update_z(2.0, 0.0, 1.0, 1.0, 2), 1.0);
    assert_eq!(update_z(2.0, 1.0, 3.0, 1.0, 2), 0.0);
    assert_eq!(update_z(0.0, 1.0, 0.0, 1.0, 2), 0.5);
}

#[test]
fn p2_examples() {
    assert_eq!(solve_p2(1.0, &[0.0, 0.0], &[0.0, 0.0], &[3.0, 4.0], 80.0), vec![0.0, 0.0]);
    let x = solve_p2(4.0, &[6.0], &[4.0], &[4.0], 2.0);
    assert!((x[0] - 2.0).abs() < 1e-12);
    assert!((grid_argmin(4.0, 10.0, 4.0, 2.0, 100_000) - 2.0).abs() < 1e-4);
    let x = solve_p2(2.0, &[10.0], &[0.0], &[4.0], 2.0);
    assert_eq!(x[0], 4.0);
    assert_eq!(grid_argmin(2.0, 10.0, 4.0, 2.0, 100_000), 4.0);
}

#[test]
fn p2_matches_grid_search_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let q = rng.random_range(0.0..200.0);
        let z = rng.random_range(0.0..50.0);
        let cap = rng.random_range(0.0..150.0);
        let v = rng.random_range(1.0..150.0);
        let price = rng.random_range(0.0..(q + z + 1.0) / v * 1.5);
        let x = solve_p2(price, &[q], &[z], &[cap], v)[0];
        let oracle = grid_argmin(price, q + z, cap, v, 100_000);
        assert!((x - oracle).abs() <= 1e-4 * cap.max(1e-12) + 1e-12, "x {x} vs grid {oracle}");
    }
}

#[test]
fn delay_bound_examples() {
    let params = SchedulerParams { v: 80.0, alpha: vec![1.0], r: vec![12] };
    let mut s = QueueState::new(1);
    assert_eq!(s.delay_bound(0, &params), 0.0);
    s.q_max_seen[0] = 20.0;
    s.z_max_seen[0] = 4.0;
    assert_eq!(s.delay_bound(0, &params), 288.0);
    let doubled = SchedulerParams { alpha: vec![2.0], ..params.clone() };
    assert_eq!(s.delay_bound(0, &doubled), 144.0);
}

#[test]
fn gap_bound_examples() {
    let params = SchedulerParams { v: 80.0, alpha: vec![1.0, 1.0], r: vec![12, 24] };
    let zero = BoundConstants { a: vec![0.0; 2], q: vec![0.0; 2], z: vec![0.0; 2], x_bar: vec![0.0; 2] };
    // Only the (α/R)² floor remains.
    let floor = 0.5 * ((1.0f64 / 12.0).powi(2) + (1.0f64 / 24.0).powi(2)) / 80.0;
    assert!((gap_bound(&zero, &params) - floor).abs() < 1e-15);

    let c = BoundConstants { a: vec![7.0, 60.0], q: vec![30.0, 100.0], z: vec![2.0, 5.0], x_bar: vec![14.0, 120.0] };
    let by_hand = (0.5 * 49.0 + 30.0 * 7.0 + 2.0 / 12.0 + 0.5 * 196.0 + 0.5 * 196.0)
        + (0.5 * 3600.0 + 100.0 * 60.0 + 5.0 / 24.0 + 0.5 * 14400.0 + 0.5 * 14400.0);
    assert!((gap_constant(&c, &params) - by_hand).abs() < 1e-9);
    let twice = SchedulerParams { v: 160.0, ..params.clone() };
    assert!((gap_bound(&c, &params) - 2.0 * gap_bound(&c, &twice)).abs() < 1e-9);
}

#[test]
fn running_maxima_are_monotone() {
    let params = SchedulerParams { v: 10.0, alpha: vec![1.0], r: vec![4] };
    let mut s = QueueState::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut prev = s.clone();
    for _ in 0..200 {
        let a = rng.random_range(0.0..5.0);
        let x = rng.random_range(0.0..6.0);
        s.advance(&[x], &[a], &params);
        assert!(s.q_max_seen[0] >= prev.q_max_seen[0] && s.z_max_seen[0] >= prev.z_max_seen[0]);
        assert!(s.q_max_seen[0] >= s.q[0] && s.z_max_seen[0] >= s.z[0]);
        prev = s.clone();
    }
}

proptest! {
    #[test]
    fn p2_monotone(q in 0.0f64..100.0, z in 0.0f64..20.0, cap in 0.0f64..50.0, v in 0.5f64..100.0,
                   p1 in 0.0f64..10.0, dp in 0.0f64..10.0, db in 0.0f64..30.0) {
        let lo = solve_p2(p1, &[q], &[z], &[cap], v)[0];
        let hi = solve_p2(p1 + dp, &[q], &[z], &[cap], v)[0];
        prop_assert!(hi <= lo);
        let more = solve_p2(p1, &[q + db], &[z], &[cap], v)[0];
        prop_assert!(more >= lo);
        prop_assert!((0.0..=cap).contains(&lo));
    }

    #[test]
    fn queues_stay_nonnegative(q in 0.0f64..50.0, z in 0.0f64..50.0, x in 0.0f64..100.0, a in 0.0f64..50.0,
                               alpha in 0.01f64..10.0, r in 1usize..100) {
        prop_assert!(update_q(q, x, a) >= 0.0);
        prop_assert!(update_z(z, q, x, alpha, r) >= 0.0);
    }
}
