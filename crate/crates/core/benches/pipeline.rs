use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evbid::harness::{run, sweep, RunOptions, Strategy, SweepParam};
use evbid::par::Exec;
use evbid::scenario::{synthetic, Scenario};

fn short(exec: Exec) -> Scenario {
    let mut s = synthetic(30, 5, 11);
    s.params.horizon = 48;
    s.params.exec = exec;
    for a in &mut s.aggregators {
        if let Some(g) = &mut a.generate {
            g.arrival_window = [0, 24];
        }
    }
    s
}

fn online_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("online_run_30bus_5agg_48slots");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let s = short(exec);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &s, |b, s| {
            b.iter(|| run(s, Strategy::Online, RunOptions::default()).expect("run"))
        });
    }
    group.finish();
}

fn v_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("v_sweep_4_points");
    group.sample_size(10);
    let s = short(Exec::Sequential);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| sweep(&s, SweepParam::V, &[1.0, 40.0, 80.0, 120.0], exec).expect("sweep"))
        });
    }
    group.finish();
}

criterion_group!(benches, online_run, v_sweep);
criterion_main!(benches);
