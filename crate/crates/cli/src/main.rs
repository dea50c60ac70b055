use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evbid::harness::{self, RunOptions, Strategy, SweepParam};
use evbid::par::Exec;
use evbid::scenario::{self, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "evbid", version, about = "Real-time bidding and clearing for EV charging aggregators")]
struct Cli {
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one strategy and write metrics.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "online")]
        strategy: Strategy,
        /// Output directory for metrics.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sweep the online scheme, e.g. `v=20,40,80` or `alpha=0.5,1,2`.
        #[arg(long)]
        sweep: Option<String>,
        /// Log the active set and KKT residuals of every clearing.
        #[arg(long)]
        debug_solver: bool,
    },
    /// Run all four strategies and print a CSV table with costs relative
    /// to the offline optimum.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario (or random ones) against the scheme's guarantees.
    Validate {
        scenario: Option<PathBuf>,
        /// Also validate this many random small scenarios.
        #[arg(long, default_value_t = 0)]
        fuzz: u64,
        /// Skip the offline benchmark and the cost-gap check.
        #[arg(long)]
        no_offline: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a generated scenario as JSON.
    Generate {
        #[arg(value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        buses: usize,
        #[arg(long, default_value_t = 3)]
        aggregators: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Toy,
    PaperDesk,
    Synthetic,
    Fuzz,
}

enum Failure {
    Schema(String),
    Infeasible(String),
    Io(String),
    Validation(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) | Failure::Other(_) => 1,
            Failure::Schema(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Io(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Schema(m)
            | Failure::Infeasible(m)
            | Failure::Io(m)
            | Failure::Validation(m)
            | Failure::Other(m) => m,
        }
    }
}

fn from_harness(e: harness::HarnessError) -> Failure {
    match e {
        harness::HarnessError::Io(e) => Failure::Io(e.to_string()),
        harness::HarnessError::Scenario(s) => from_scenario(s, None),
        e if e.is_infeasible() => Failure::Infeasible(e.to_string()),
        e => Failure::Other(e.to_string()),
    }
}

fn from_scenario(e: ScenarioError, path: Option<&Path>) -> Failure {
    let file = path.map(|p| p.display().to_string()).unwrap_or_else(|| "scenario".into());
    match e {
        ScenarioError::Parse { line, column, message } => Failure::Schema(format!("{file}:{line}:{column}: {message}")),
        ScenarioError::Market(m @ evbid::market::MarketError::Infeasible { .. }) => Failure::Infeasible(m.to_string()),
        other => Failure::Schema(format!("{file}: {other}")),
    }
}

fn io<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", what.display()))
}

fn load(path: &Path, seed: Option<u64>, exec: Option<Exec>) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut s = Scenario::from_json(&text).map_err(|e| from_scenario(e, Some(path)))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(exec) = exec {
        s.params.exec = exec;
    }
    s.build().map_err(|e| from_scenario(e, Some(path)))?;
    Ok(s)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io(dir))?;
        }
    }
    fs::write(path, text).map_err(io(path))
}

fn write_run(dir: &Path, prefix: &str, out: &harness::RunOutput) -> Result<(), Failure> {
    let mut csv = Vec::new();
    out.write_csv(&mut csv).map_err(from_harness)?;
    write(&dir.join(format!("{prefix}metrics.csv")), &String::from_utf8_lossy(&csv))?;
    write(&dir.join(format!("{prefix}summary.json")), &(out.summary_json() + "\n"))
}

fn parse_sweep(spec: &str) -> Result<(SweepParam, Vec<f64>), Failure> {
    let bad = || Failure::Schema(format!("--sweep `{spec}`: expected v=a,b,... or alpha=a,b,..."));
    let (name, list) = spec.split_once('=').ok_or_else(bad)?;
    let param = match name.trim().to_ascii_lowercase().as_str() {
        "v" => SweepParam::V,
        "alpha" => SweepParam::Alpha,
        _ => return Err(bad()),
    };
    let values = list.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad())?;
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(bad());
    }
    Ok((param, values))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let exec = cli.sequential.then_some(Exec::Sequential);
    match cli.cmd {
        Cmd::Run { scenario, strategy, out, seed, sweep, debug_solver } => {
            let s = load(&scenario, seed, exec)?;
            if let Some(spec) = sweep {
                let (param, values) = parse_sweep(&spec)?;
                let points = harness::sweep(&s, param, &values, exec.unwrap_or(s.params.exec)).map_err(from_harness)?;
                let json = serde_json::to_string_pretty(&points).expect("sweep serializes") + "\n";
                match out {
                    Some(dir) => write(&dir.join("sweep.json"), &json)?,
                    None => print!("{json}"),
                }
                return Ok(());
            }
            let opts = RunOptions { check_market: debug_solver, debug_solver };
            let result = harness::run(&s, strategy, opts).map_err(from_harness)?;
            match out {
                Some(dir) => write_run(&dir, "", &result)?,
                None => println!("{}", result.summary_json()),
            }
            Ok(())
        }
        Cmd::Compare { scenario, out, seed } => {
            let s = load(&scenario, seed, exec)?;
            let runs = harness::compare(&s).map_err(from_harness)?;
            let rows = harness::compare_rows(&runs);
            let mut table = Vec::new();
            harness::write_compare_csv(&rows, &mut table).map_err(from_harness)?;
            print!("{}", String::from_utf8_lossy(&table));
            if let Some(dir) = out {
                for r in &runs {
                    write_run(&dir, &format!("{}_", r.summary.strategy), r)?;
                }
                write(&dir.join("compare.csv"), &String::from_utf8_lossy(&table))?;
                let all: Vec<_> = runs.iter().map(|r| &r.summary).collect();
                write(&dir.join("compare.json"), &(serde_json::to_string_pretty(&all).expect("serializes") + "\n"))?;
            }
            Ok(())
        }
        Cmd::Validate { scenario, fuzz, no_offline, seed } => {
            let mut cases = Vec::new();
            if let Some(path) = &scenario {
                cases.push(load(path, seed, exec)?);
            }
            for i in 0..fuzz {
                let mut s = scenario::fuzz(seed.unwrap_or(0).wrapping_add(i));
                if let Some(e) = exec {
                    s.params.exec = e;
                }
                cases.push(s);
            }
            if cases.is_empty() {
                cases.push(scenario::toy());
            }
            let mut failed = 0;
            for s in &cases {
                let report = harness::validate_scenario(s, !no_offline).map_err(from_harness)?;
                for c in &report.checks {
                    println!(
                        "{} {} seed={} {}: {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        report.scenario,
                        report.seed,
                        c.name,
                        c.detail
                    );
                }
                failed += report.checks.iter().filter(|c| !c.passed).count();
            }
            if failed > 0 {
                return Err(Failure::Validation(format!("{failed} checks failed")));
            }
            Ok(())
        }
        Cmd::Generate { kind, seed, buses, aggregators, out } => {
            if matches!(kind, Kind::Synthetic) && (buses < 2 || aggregators == 0) {
                return Err(Failure::Schema("synthetic scenarios need at least 2 buses and 1 aggregator".into()));
            }
            let s = match kind {
                Kind::Toy => scenario::toy(),
                Kind::PaperDesk => scenario::paper_desk(seed),
                Kind::Synthetic => scenario::synthetic(buses, aggregators, seed),
                Kind::Fuzz => scenario::fuzz(seed),
            };
            let json = s.to_json() + "\n";
            match out {
                Some(path) => write(&path, &json),
                None => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
