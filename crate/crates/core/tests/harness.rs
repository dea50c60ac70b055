use evbid::fleet::{EvTask, Fleet, FleetParams};
use evbid::harness::*;
use evbid::par::Exec;
use evbid::scenario::{fuzz, toy, Scenario};

fn opts() -> RunOptions {
    RunOptions { check_market: true, debug_solver: false }
}

fn csv_of(out: &RunOutput) -> String {
    let mut buf = Vec::new();
    out.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn ev(id: u64, arrival: usize, departure: usize, now: f64, target: f64, cap: f64) -> EvTask {
    EvTask {
        id,
        arrival_slot: arrival,
        departure_slot: departure,
        energy_arrival: now,
        energy_target: target,
        energy_min: 0.0,
        energy_max: target + 10.0,
        power_cap: cap,
        energy_now: now,
    }
}

#[test]
fn toy_slot_one_clears_at_ten_thirds() {
    let out = run(&toy(), Strategy::Online, opts()).unwrap();
    let row = out.rows.iter().find(|r| r.t == 1).unwrap();
    assert!((row.x - 10.0 / 3.0).abs() <= 1e-6, "x = {}", row.x);
    assert!((row.lmp - 10.0 / 3.0).abs() <= 1e-6, "lmp = {}", row.lmp);
    assert!(out.summary.market_check_failures.is_empty(), "{:?}", out.summary.market_check_failures);
}

#[test]
fn toy_slot_zero_is_idle() {
    // Queues start empty, so nothing is bid before the first arrivals register.
    let out = run(&toy(), Strategy::Online, opts()).unwrap();
    let row = out.rows.iter().find(|r| r.t == 0).unwrap();
    assert_eq!(row.x, 0.0);
    assert!(row.q_total > 0.0);
}

#[test]
fn csv_header_is_stable() {
    let text = csv_of(&run(&toy(), Strategy::Online, opts()).unwrap());
    assert_eq!(text.lines().next().unwrap(), "t,agg_id,lmp,x,cost_cum,q_total,z_total,completed");
    assert_eq!(text.lines().count(), 1 + 12);
}

#[test]
fn empty_fleet_costs_nothing_under_every_strategy() {
    let mut s = toy();
    s.aggregators[0].evs.clear();
    let runs: Vec<_> = Strategy::ALL.iter().map(|&st| run(&s, st, opts()).unwrap()).collect();
    for r in &runs {
        assert_eq!(r.summary.total_cost, 0.0, "{}", r.summary.strategy);
        assert_eq!(r.summary.evs, 0);
        assert!(r.rows.iter().all(|row| row.x == 0.0));
    }
    let prices = |r: &RunOutput| r.rows.iter().map(|row| row.lmp).collect::<Vec<_>>();
    for r in &runs[1..] {
        assert_eq!(prices(r), prices(&runs[0]));
    }
}

#[test]
fn offline_is_cheapest_on_toy() {
    let s = toy();
    let b1 = run(&s, Strategy::B1, opts()).unwrap().summary;
    let online = run(&s, Strategy::Online, opts()).unwrap().summary;
    assert_eq!(b1.completed, 2);
    assert!(b1.total_cost <= online.total_cost + 1e-6 * (1.0 + online.total_cost));
}

#[test]
fn offline_plan_meets_every_need() {
    let s = toy();
    let built = s.build().unwrap();
    let plan = plan_offline(&built).unwrap();
    for (i, need) in [(0usize, 12.0), (1, 18.0)] {
        let got: f64 = plan.powers.iter().flat_map(|row| &row[0]).filter(|p| p.0 == i).map(|p| p.1).sum();
        assert!((got - need).abs() <= 1e-6, "EV {i}: {got}");
    }
    assert!(plan.polish <= 1e-4);
}

#[test]
fn outputs_are_deterministic_and_executor_independent() {
    let mut s = fuzz(3);
    s.params.exec = Exec::Parallel;
    let a = run(&s, Strategy::Online, RunOptions::default()).unwrap();
    let b = run(&s, Strategy::Online, RunOptions::default()).unwrap();
    s.params.exec = Exec::Sequential;
    let c = run(&s, Strategy::Online, RunOptions::default()).unwrap();
    assert_eq!(csv_of(&a), csv_of(&b));
    assert_eq!(csv_of(&a), csv_of(&c));
    assert_eq!(a.summary_json().replace("parallel", ""), b.summary_json().replace("parallel", ""));
    assert_eq!(a.summary_json(), c.summary_json());
}

#[test]
fn scenario_round_trip_reproduces_run() {
    let s = fuzz(8);
    let back = Scenario::from_json(&s.to_json()).unwrap();
    assert_eq!(back, s);
    for st in [Strategy::Online, Strategy::B3] {
        assert_eq!(csv_of(&run(&s, st, opts()).unwrap()), csv_of(&run(&back, st, opts()).unwrap()));
    }
}

#[test]
fn payments_match_price_times_allocation() {
    for seed in 0..4 {
        let s = fuzz(seed);
        let dt = s.params.dt_hours;
        for st in Strategy::ALL {
            let out = run(&s, st, RunOptions::default()).unwrap();
            let paid: f64 = out.rows.iter().map(|r| r.lmp * r.x * dt).sum();
            let total = out.summary.total_cost;
            assert!((paid - total).abs() <= 1e-6 * (1.0 + total.abs()), "{st} seed {seed}: {paid} vs {total}");
            assert!(out.summary.accounting_residual <= 1e-6 * (1.0 + total.abs()));
            let last = out.rows.iter().rev().take(s.aggregators.len()).map(|r| r.cost_cum).sum::<f64>();
            assert!((last - total).abs() <= 1e-6 * (1.0 + total.abs()));
        }
    }
}

#[test]
fn online_allocation_equals_aggregator_response() {
    for seed in 10..14 {
        let out = run(&fuzz(seed), Strategy::Online, opts()).unwrap().summary;
        assert!(out.prop4_checks > 0);
        assert_eq!(out.prop4_violations, 0, "seed {seed}: max residual {}", out.prop4_max_residual);
        assert_eq!(out.refinement_worse, 0);
        assert!(out.market_check_failures.is_empty(), "{:?}", out.market_check_failures);
    }
}

#[test]
fn sweep_reports_one_point_per_value() {
    let pts = sweep(&toy(), SweepParam::V, &[1.0, 2.0, 8.0], Exec::Sequential).unwrap();
    assert_eq!(pts.iter().map(|p| p.value).collect::<Vec<_>>(), vec![1.0, 2.0, 8.0]);
    // A larger V prices the toy fleet out of the market sooner.
    assert!(pts[2].total_energy_kwh <= pts[0].total_energy_kwh + 1e-9);
    assert!(sweep(&toy(), SweepParam::Alpha, &[0.0], Exec::Sequential).is_err());
}

#[test]
fn zero_alpha_rejected() {
    let mut s = toy();
    s.params.alpha = vec![0.0];
    assert!(s.validate().is_err());
    assert!(run(&s, Strategy::Online, opts()).is_err());
}

#[test]
fn overloaded_network_is_infeasible() {
    let mut s = toy();
    s.network.loads.push(evbid::scenario::LoadSpec { bus: 1, series: vec![150.0], hold: 12 });
    for st in Strategy::ALL {
        let err = run(&s, st, opts()).unwrap_err();
        assert!(err.is_infeasible(), "{st}: {err}");
    }
}

#[test]
fn strategy_names_parse() {
    for st in Strategy::ALL {
        assert_eq!(st.to_string().parse::<Strategy>().unwrap(), st);
    }
    assert_eq!("proposed".parse::<Strategy>().unwrap(), Strategy::Online);
    assert!("b4".parse::<Strategy>().is_err());
}

#[test]
fn compare_table_is_relative_to_offline() {
    let runs = compare(&toy()).unwrap();
    let rows = compare_rows(&runs);
    assert_eq!(rows.len(), 4);
    let b1 = rows.iter().find(|r| r.strategy == Strategy::B1).unwrap();
    assert!((b1.relative_pct - 100.0).abs() < 1e-12);
    for r in &rows {
        assert!((r.relative_pct - 100.0 * r.total_cost / b1.total_cost).abs() < 1e-9);
    }
    let mut buf = Vec::new();
    write_compare_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("strategy,total_cost,relative_pct,unit_cost"));
}

#[test]
fn b3_bounds_examples() {
    let params = FleetParams { eta: 1.0, dt: 1.0, horizon: 10 };
    // 6 kWh left over 3 slots at 4 kW: spread 2 kW; urgency (6 − 8)/1 < 0.
    let a = ev(1, 0, 3, 0.0, 6.0, 4.0);
    // 7 kWh left over 2 slots at 4 kW: spread 3.5 kW; urgency 7 − 4 = 3.
    let b = ev(2, 0, 2, 1.0, 8.0, 4.0);
    let f = Fleet::new(params, vec![a.clone()], &[3], &[1.0]).unwrap();
    assert_eq!(b3_bounds(&f, 0), (2.0, 4.0));
    let f = Fleet::new(params, vec![b], &[2], &[1.0]).unwrap();
    assert_eq!(b3_bounds(&f, 0), (3.5, 4.0));
    // Last slot: the whole remainder is urgent, capped at the power limit.
    let f = Fleet::new(params, vec![ev(3, 0, 1, 0.0, 6.0, 4.0)], &[1], &[1.0]).unwrap();
    assert_eq!(b3_bounds(&f, 0), (4.0, 4.0));
    // Not yet arrived.
    let f = Fleet::new(params, vec![ev(4, 5, 8, 0.0, 6.0, 4.0)], &[3], &[1.0]).unwrap();
    assert_eq!(b3_bounds(&f, 0), (0.0, 0.0));
}

#[test]
fn linear_response_examples() {
    let (q, z, caps) = ([80.0, 40.0, 40.0], [0.0, 0.0, 0.0], [5.0, 3.0, 2.0]);
    // Thresholds 2, 1, 1 with V = 40.
    assert_eq!(linear_response(1.5, 5.0, &q, &z, &caps, 40.0), vec![5.0, 0.0, 0.0]);
    assert_eq!(linear_response(1.0, 9.0, &q, &z, &caps, 40.0), vec![5.0, 3.0, 1.0]);
    assert_eq!(linear_response(3.0, 0.0, &q, &z, &caps, 40.0), vec![0.0, 0.0, 0.0]);
    assert_eq!(linear_response(0.5, 10.0, &q, &z, &caps, 40.0), vec![5.0, 3.0, 2.0]);
}

#[test]
fn validation_passes_on_toy_and_fuzz() {
    for s in [toy(), fuzz(21)] {
        let report = validate_scenario(&s, true).unwrap();
        assert!(report.passed(), "{:#?}", report.checks);
        assert!(report.checks.iter().any(|c| c.name == "cost_gap_bound"));
    }
}
