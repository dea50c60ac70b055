use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn evbid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evbid")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy_file(dir: &Path) -> PathBuf {
    let path = dir.join("toy.json");
    let o = evbid(&["generate", "toy", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn edit(src: &Path, dst: &Path, f: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(src).unwrap()).unwrap();
    f(&mut v);
    fs::write(dst, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    dst.to_path_buf()
}

#[test]
fn run_writes_metrics_and_summary() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    let out = dir.path().join("out");
    let o = evbid(&["run", toy.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("t,agg_id,lmp,x,cost_cum,q_total,z_total,completed\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["strategy"], "online");
    assert_eq!(summary["evs"], 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    for st in ["online", "b1", "b2", "b3"] {
        let (a, b) = (dir.path().join(format!("{st}a")), dir.path().join(format!("{st}b")));
        for d in [&a, &b] {
            let o = evbid(&["run", toy.to_str().unwrap(), "--strategy", st, "--out", d.to_str().unwrap()]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        for f in ["metrics.csv", "summary.json"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{st} {f}");
        }
    }
}

#[test]
fn sequential_flag_changes_nothing_but_speed() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("fuzz.json");
    assert!(evbid(&["generate", "fuzz", "--seed", "4", "--out", path.to_str().unwrap()]).status.success());
    let a = evbid(&["run", path.to_str().unwrap()]);
    let b = evbid(&["--sequential", "run", path.to_str().unwrap()]);
    assert!(a.status.success() && b.status.success());
    let strip = |o: &Output| String::from_utf8_lossy(&o.stdout).replace("\"parallel\"", "\"sequential\"");
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn malformed_json_is_a_schema_error_with_position() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"name\": \"x\",\n  \"seed\": oops\n}\n").unwrap();
    let o = evbid(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    let bad = edit(&toy, &dir.path().join("extra.json"), |v| v["params"]["colour"] = 3.into());
    let o = evbid(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn zero_alpha_is_rejected_at_load() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    let bad = edit(&toy, &dir.path().join("alpha.json"), |v| v["params"]["alpha"][0] = 0.0.into());
    let o = evbid(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn overloaded_network_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    let bad = edit(&toy, &dir.path().join("heavy.json"), |v| {
        v["network"]["loads"] = serde_json::json!([{ "bus": 1, "series": [150.0] }]);
    });
    for st in ["online", "b1"] {
        let o = evbid(&["run", bad.to_str().unwrap(), "--strategy", st]);
        assert_eq!(o.status.code(), Some(3), "{st}: {}", stderr(&o));
    }
}

#[test]
fn missing_file_and_unwritable_output_are_io_errors() {
    let dir = TempDir::new().unwrap();
    let o = evbid(&["run", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let toy = toy_file(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = evbid(&["run", toy.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn compare_prints_four_rows_relative_to_offline() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    let out = dir.path().join("cmp");
    let o = evbid(&["compare", toy.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("strategy,total_cost,relative_pct,unit_cost"));
    let b1: Vec<&str> = lines.iter().find(|l| l.starts_with("b1,")).unwrap().split(',').collect();
    assert_eq!(b1[2].parse::<f64>().unwrap(), 100.0);
    for st in ["online", "b1", "b2", "b3"] {
        assert!(out.join(format!("{st}_metrics.csv")).exists());
        assert!(out.join(format!("{st}_summary.json")).exists());
    }
    assert_eq!(fs::read_to_string(out.join("compare.csv")).unwrap(), text);
}

#[test]
fn sweep_emits_one_point_per_value() {
    let dir = TempDir::new().unwrap();
    let toy = toy_file(dir.path());
    let o = evbid(&["run", toy.to_str().unwrap(), "--sweep", "V=1,40,80,120"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pts: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(pts.as_array().unwrap().len(), 4);
    assert_eq!(evbid(&["run", toy.to_str().unwrap(), "--sweep", "alpha=0"]).status.code(), Some(2));
    assert_eq!(evbid(&["run", toy.to_str().unwrap(), "--sweep", "gamma=1"]).status.code(), Some(2));
}

#[test]
fn validate_fuzz_passes() {
    let o = evbid(&["validate", "--fuzz", "3", "--seed", "40"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
    assert!(text.contains("delay_bound") && text.contains("cost_gap_bound"));
}

#[test]
fn generated_scenarios_load_back() {
    let dir = TempDir::new().unwrap();
    for kind in ["toy", "paper-desk", "synthetic", "fuzz"] {
        let path = dir.path().join(format!("{kind}.json"));
        let o = evbid(&["generate", kind, "--buses", "8", "--aggregators", "2", "--out", path.to_str().unwrap()]);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(v["name"].as_str().unwrap().starts_with(kind.split('-').next().unwrap()), "{kind}");
        if matches!(kind, "toy" | "fuzz") {
            let o = evbid(&["validate", path.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{kind}: {}", String::from_utf8_lossy(&o.stdout));
        }
    }
    assert_eq!(evbid(&["generate", "synthetic", "--buses", "1"]).status.code(), Some(2));
}
