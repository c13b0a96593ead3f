use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abcc::checker::check_trace;
use abcc::counterexample::run_uniform_counterexample;
use abcc::params::{audit_table, ConstraintReport, ConstraintStatus, FeasibleRegion, Interval, RowAudit};
use abcc::scenario::{default_threads, run_scenario_with, Scenario};
use abcc::sim::Trace;
use abcc::{check_constraints, feasible_interval, ExactParams, Params64};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "abcc", version, about = "Churn-tolerant Byzantine register: parameters, simulation and checking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter feasibility.
    Params {
        #[command(subcommand)]
        command: ParamsCommand,
    },
    /// Simulation batches.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Check a JSON-lines trace. Exit 0 pass, 1 violation, 2 audit-only failure.
    Check {
        trace: PathBuf,
        /// Write the verdict JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduction of the impossibility result.
    Counterexample {
        #[command(subcommand)]
        command: CounterexampleCommand,
    },
}

#[derive(Subcommand)]
enum ParamsCommand {
    /// Check a key=value or JSON parameter file against the seven constraints.
    Check {
        file: PathBuf,
        #[arg(long)]
        json: bool,
        /// Evaluate in exact rational arithmetic.
        #[arg(long)]
        exact: bool,
    },
    /// Evaluate every row of the reference parameter table.
    Table {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario file (TOML or JSON) `repeat` times and check each trace.
    Run {
        scenario: PathBuf,
        /// Base seed; run i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Virtual duration in units of d.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        repeat: Option<u32>,
        #[arg(long)]
        override_feasibility: bool,
        /// Write one `<name>-<seed>.jsonl` trace per run into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
        /// Print the batch report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum CounterexampleCommand {
    /// Stale read by a client whose thresholds ignore n and f.
    Uniform {
        #[arg(long)]
        json: bool,
        /// Write the three traces into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Params { command: ParamsCommand::Check { file, json, exact } } => params_check(&file, json, exact),
        Command::Params { command: ParamsCommand::Table { json } } => params_table(json),
        Command::Sim { command } => sim(command),
        Command::Check { trace, out } => check(&trace, out.as_deref()),
        Command::Counterexample { command: CounterexampleCommand::Uniform { json, trace_dir } } => {
            counterexample(json, trace_dir.as_deref())
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn interval_text(i: &Interval<f64>) -> String {
    match i {
        Interval::Empty => "empty".into(),
        Interval::Range { lower, upper } => format!(
            "{}{:.4}, {:.4}{}",
            if lower.inclusive { '[' } else { '(' },
            lower.value,
            upper.value,
            if upper.inclusive { ']' } else { ')' }
        ),
    }
}

fn region_f64<S: abcc::Scalar>(r: FeasibleRegion<S>) -> FeasibleRegion<f64> {
    let conv = |i: Interval<S>| match i {
        Interval::Empty => Interval::Empty,
        Interval::Range { lower, upper } => Interval::new(
            abcc::params::Endpoint { value: lower.value.to_f64_lossy(), inclusive: lower.inclusive },
            abcc::params::Endpoint { value: upper.value.to_f64_lossy(), inclusive: upper.inclusive },
        ),
    };
    FeasibleRegion { gamma: conv(r.gamma), beta: conv(r.beta) }
}

fn constraint_lines(report: &ConstraintReport<f64>) -> Vec<String> {
    report
        .per_constraint
        .iter()
        .map(|r| {
            let status = match (r.status, r.satisfied) {
                (ConstraintStatus::NotApplicable, _) => "n/a",
                (ConstraintStatus::DomainError, _) => "domain error",
                (_, true) => "ok",
                (_, false) => "FAILED",
            };
            format!(
                "  ({}) {:>10} {} {:<10} slack {:>10}  {status}",
                r.index,
                fmt(r.lhs),
                r.relation,
                fmt(r.rhs),
                fmt(r.slack)
            )
        })
        .collect()
}

fn params_check(file: &Path, as_json: bool, exact: bool) -> Result<ExitCode> {
    let text = std::fs::read_to_string(file)?;
    let (params, report, region) = if exact {
        let p = ExactParams::from_text(&text)?;
        let region = feasible_interval(&p).ok().map(region_f64);
        (p.to_f64(), check_constraints(&p).to_f64(), region)
    } else {
        let p = Params64::from_text(&text)?;
        let region = feasible_interval(&p).ok();
        (p.clone(), check_constraints(&p), region)
    };
    if as_json {
        let out = json!({ "params": params, "report": report, "region": region });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "alpha={} f={} ns_min={} gamma={} beta={}",
            params.alpha,
            params.f,
            params.ns_min,
            fmt(params.gamma),
            fmt(params.beta)
        );
        for line in constraint_lines(&report) {
            println!("{line}");
        }
        match &region {
            Some(r) => println!("gamma in {}, beta in {}", interval_text(&r.gamma), interval_text(&r.beta)),
            None => println!("no (gamma, beta) region: constraints (1)-(2) fail"),
        }
        println!("{}", if report.feasible { "feasible" } else { "infeasible" });
    }
    Ok(if report.feasible { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn row_failures(r: &ConstraintReport<f64>) -> String {
    let failing: Vec<String> =
        r.failing().map(|c| format!("({}) {:+.4}", c.index, c.slack.unwrap_or(f64::NAN))).collect();
    if failing.is_empty() {
        "-".into()
    } else {
        failing.join(" ")
    }
}

fn params_table(as_json: bool) -> Result<ExitCode> {
    let rows: Vec<RowAudit<f64>> = audit_table();
    if as_json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "{:>3} {:>5} {:>7} {:>5} {:>6} {:>5}  {:<10} {:<26} {:<10} {:>8}",
        "row", "f", "ns_min", "alpha", "gamma", "beta", "printed", "failing", "no +1", "min ns"
    );
    for r in &rows {
        let p = &r.params;
        println!(
            "{:>3} {:>5} {:>7} {:>5} {:>6} {:>5}  {:<10} {:<26} {:<10} {:>8}",
            r.row,
            p.f,
            p.ns_min,
            p.alpha,
            p.gamma.map_or("N/A".into(), |g| g.to_string()),
            p.beta.map_or("N/A".into(), |b| b.to_string()),
            if r.as_printed.feasible { "feasible" } else { "INFEASIBLE" },
            row_failures(&r.as_printed),
            if r.without_unit_term.feasible { "feasible" } else { "INFEASIBLE" },
            r.min_ns_min.map_or("-".into(), |n| n.to_string()),
        );
    }
    let failing = rows.iter().filter(|r| !r.as_printed.feasible).count();
    println!("{} rows, {failing} infeasible as printed", rows.len());
    Ok(ExitCode::SUCCESS)
}

fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn sim(command: SimCommand) -> Result<ExitCode> {
    let SimCommand::Run { scenario, seed, duration, repeat, override_feasibility, trace_dir, threads, json } = command;
    let mut s = Scenario::load(&scenario)?;
    if let Some(seed) = seed {
        s.sim.seed = seed;
    }
    if let Some(d) = duration {
        s.sim.duration = d;
    }
    if let Some(r) = repeat {
        s.repeat = r;
    }
    s.sim.override_feasibility |= override_feasibility;
    if let Some(dir) = &trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let write_error = std::sync::Mutex::new(None);
    let report = run_scenario_with(&s, threads.unwrap_or_else(default_threads), |i, trace, summary| {
        if let Some(dir) = &trace_dir {
            let path = dir.join(format!("{}-{}.jsonl", s.name, trace.header.seed));
            if let Err(e) = write_trace(trace, &path) {
                write_error.lock().unwrap().get_or_insert(e.to_string());
            }
        }
        if !json {
            eprintln!(
                "run {i} seed {}: exit {} ({} ops, {} churn events)",
                summary.seed, summary.exit_code, summary.ops, summary.churn_events
            );
        }
    })?;
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e.into());
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", report.summary());
    }
    Ok(if report.meets_expectation { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn check(path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let trace = Trace::read_jsonl(BufReader::new(File::open(path)?))?;
    let verdict = check_trace(&trace);
    let text = serde_json::to_string_pretty(&verdict)?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    eprintln!("{}", verdict.summary());
    Ok(ExitCode::from(verdict.exit_code() as u8))
}

fn counterexample(as_json: bool, trace_dir: Option<&Path>) -> Result<ExitCode> {
    let report = run_uniform_counterexample()?;
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
        for (name, case) in [
            ("uniform", &report.uniform),
            ("abcc-control", &report.abcc_control),
            ("honest-control", &report.honest_control),
        ] {
            if let Some(t) = &case.trace {
                write_trace(t, &dir.join(format!("{name}.jsonl")))?;
            }
        }
    }
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", report.summary());
    }
    Ok(if report.demonstrated { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
