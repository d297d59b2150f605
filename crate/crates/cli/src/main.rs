//! Command-line front end tying together the simulator, the checkers, the
//! exhaustive explorer, and the native lock stress harness.
//!
//! Exit codes: 0 when all checks pass, 1 on any violation (or an incomplete
//! exploration), 2 on usage errors.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use aqlock_core::explore::{explore, run, Checks, ExploreReport, ScheduleParams, SchedulerKind};
use aqlock_core::trace::TraceLine;
use aqlock_core::verify::{analyze_trace, TraceReport};
use aqlock_core::Violation;

#[derive(Parser)]
#[command(name = "aqlock", version, about = "Abortable queue lock laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded schedule with online checks and optional trace output.
    Simulate(SimulateArgs),
    /// Exhaustively check every reachable configuration of a small instance.
    Explore(ExploreArgs),
    /// Re-run the trace analyzer over a stored trace file.
    Replay(ReplayArgs),
    /// Hammer the native lock from many threads.
    Stress(StressArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of participating processes.
    #[arg(long, default_value_t = 2)]
    procs: u32,
    /// Schedule step budget.
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability per step of delivering an abort signal.
    #[arg(long, default_value_t = 0.0)]
    abort_rate: f64,
    #[arg(long, value_enum, default_value_t = SchedulerArg::Random)]
    scheduler: SchedulerArg,
    /// Attempts per process; unlimited when omitted.
    #[arg(long)]
    attempts: Option<u32>,
    /// Checks to run online: comma-separated subset of
    /// invariant,progress,amortized,trace, or "all" / "none".
    #[arg(long, default_value = "all", value_parser = parse_checks)]
    check: Checks,
    /// Write the JSON-lines trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long, default_value_t = 2)]
    procs: u32,
    #[arg(long, default_value_t = 1)]
    attempts: u32,
    /// Whether the environment may signal aborts (branching on both choices).
    #[arg(long, value_enum, default_value_t = AbortsArg::None)]
    aborts: AbortsArg,
    /// State budget; the report is flagged incomplete beyond it.
    #[arg(long, default_value_t = 50_000_000)]
    max_states: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// JSON-lines trace file to analyze.
    #[arg(long)]
    trace: PathBuf,
    /// Accepted for symmetry with simulate; replay always runs the full
    /// trace analysis.
    #[arg(long, default_value = "all", value_parser = parse_checks)]
    check: Checks,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct StressArgs {
    #[arg(long, default_value_t = 8)]
    threads: u32,
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    #[arg(long, default_value_t = 0.0)]
    abort_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerArg {
    Random,
    RoundRobin,
}

#[derive(Clone, Copy, ValueEnum)]
enum AbortsArg {
    None,
    Nondet,
}

fn parse_checks(s: &str) -> Result<Checks, String> {
    match s {
        "all" => return Ok(Checks::all()),
        "none" => return Ok(Checks::none()),
        _ => {}
    }
    let mut checks = Checks::none();
    for part in s.split(',') {
        match part.trim() {
            "invariant" => checks.invariant = true,
            "progress" => checks.progress = true,
            "amortized" => checks.amortized = true,
            "trace" => checks.trace = true,
            other => return Err(format!("unknown check '{other}'")),
        }
    }
    Ok(checks)
}

/// The JSON report every subcommand writes.
#[derive(Serialize)]
struct Report {
    params: serde_json::Value,
    totals: Totals,
    bounds: Bounds,
    violations: Vec<Violation>,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    explore: Option<ExploreStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_analysis: Option<TraceStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stress: Option<aqlock_native::StressReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize, Default)]
struct Totals {
    steps: u64,
    attempts: u64,
    cs_entries: u64,
    aborts: u64,
    rmr_cc: u64,
    rmr_dsm: u64,
}

#[derive(Serialize, Default)]
struct Bounds {
    rmr_cc_per_attempt: f64,
    rmr_dsm_per_attempt: f64,
}

#[derive(Serialize)]
struct ExploreStats {
    states_visited: u64,
    transitions: u64,
    max_queue_length: usize,
    complete: bool,
    delta_pc11_skips: u64,
    elapsed_ms: u64,
}

#[derive(Serialize)]
struct TraceStats {
    attempts: u64,
    passages: u64,
    cs_entries: u64,
    aborts: u64,
    abort_signals: u64,
    max_abort_steps: u64,
    max_exit_steps: u64,
}

impl From<&TraceReport> for TraceStats {
    fn from(t: &TraceReport) -> Self {
        TraceStats {
            attempts: t.attempts,
            passages: t.passages,
            cs_entries: t.cs_entries,
            aborts: t.aborts,
            abort_signals: t.abort_signals,
            max_abort_steps: t.max_abort_steps,
            max_exit_steps: t.max_exit_steps,
        }
    }
}

impl Report {
    fn from_run(params: serde_json::Value, report: &ExploreReport, steps: u64) -> Report {
        let per = |total: u64| {
            if report.attempts_total == 0 { 0.0 } else { total as f64 / report.attempts_total as f64 }
        };
        let status = if !report.violations.is_empty() {
            "fail"
        } else if !report.complete {
            "incomplete"
        } else {
            "pass"
        };
        Report {
            params,
            totals: Totals {
                steps,
                attempts: report.attempts_total,
                cs_entries: report.cs_entries,
                aborts: report.aborts_total,
                rmr_cc: report.rmr_cc_total,
                rmr_dsm: report.rmr_dsm_total,
            },
            bounds: Bounds {
                rmr_cc_per_attempt: per(report.rmr_cc_total),
                rmr_dsm_per_attempt: per(report.rmr_dsm_total),
            },
            violations: report.violations.clone(),
            status: status.to_string(),
            explore: None,
            trace_analysis: None,
            stress: None,
            error: None,
        }
    }

    fn exit_code(&self) -> ExitCode {
        if self.status == "pass" { ExitCode::SUCCESS } else { ExitCode::from(1) }
    }
}

/// Writes the report atomically: temp file in the same directory, then rename.
fn write_report(path: &Path, report: &Report) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let tmp = dir
        .unwrap_or_else(|| Path::new("."))
        .join(format!(".{}.tmp", std::process::id()));
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, path)
}

fn finish(report: Report, path: Option<&Path>) -> ExitCode {
    if let Some(path) = path {
        if let Err(e) = write_report(path, &report) {
            eprintln!("error: cannot write report {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    println!(
        "status {}: {} attempts, {} cs entries, {} aborts, rmr cc/dsm {}/{}, {} violations",
        report.status,
        report.totals.attempts,
        report.totals.cs_entries,
        report.totals.aborts,
        report.totals.rmr_cc,
        report.totals.rmr_dsm,
        report.violations.len()
    );
    for v in report.violations.iter().take(10) {
        println!("  {v}");
    }
    report.exit_code()
}

fn cmd_simulate(args: SimulateArgs) -> ExitCode {
    if !(0.0..=1.0).contains(&args.abort_rate) {
        eprintln!("error: --abort-rate must be within [0, 1]");
        return ExitCode::from(2);
    }
    let params = ScheduleParams {
        procs: args.procs,
        scheduler: match args.scheduler {
            SchedulerArg::Random => SchedulerKind::Random,
            SchedulerArg::RoundRobin => SchedulerKind::RoundRobin,
        },
        seed: args.seed,
        max_steps: args.steps,
        abort_rate: args.abort_rate,
        attempts_per_proc: args.attempts,
        checks: args.check,
        ..Default::default()
    };
    let (trace, report) = run(&params);
    if let Some(path) = &args.trace {
        match write_trace(path, &trace) {
            Ok(()) => {}
            Err(e) => {
                eprintln!("error: cannot write trace {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    let mut out = Report::from_run(
        serde_json::to_value(&params).expect("params serialize"),
        &report,
        trace.len() as u64,
    );
    if params.checks.trace {
        if let Ok(analysis) = analyze_trace(&trace) {
            out.trace_analysis = Some(TraceStats::from(&analysis));
        }
    }
    finish(out, args.report.as_deref())
}

fn write_trace(path: &Path, trace: &[TraceLine]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for line in trace {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn cmd_explore(args: ExploreArgs) -> ExitCode {
    let params = ScheduleParams {
        procs: args.procs,
        scheduler: SchedulerKind::Exhaustive,
        nondet_aborts: matches!(args.aborts, AbortsArg::Nondet),
        attempts_per_proc: Some(args.attempts),
        max_states: args.max_states,
        ..Default::default()
    };
    let report = explore(&params);
    let mut out = Report::from_run(
        serde_json::to_value(&params).expect("params serialize"),
        &report,
        report.transitions,
    );
    out.explore = Some(ExploreStats {
        states_visited: report.states_visited,
        transitions: report.transitions,
        max_queue_length: report.max_queue_length,
        complete: report.complete,
        delta_pc11_skips: report.delta_pc11_skips,
        elapsed_ms: report.elapsed_ms,
    });
    println!(
        "explored {} states, {} transitions (complete: {})",
        report.states_visited, report.transitions, report.complete
    );
    finish(out, args.report.as_deref())
}

fn cmd_replay(args: ReplayArgs) -> ExitCode {
    let file = match fs::File::open(&args.trace) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open trace {}: {e}", args.trace.display());
            return ExitCode::from(2);
        }
    };
    let mut trace = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot read trace line {}: {e}", n + 1);
                return ExitCode::from(2);
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceLine>(&line) {
            Ok(tl) => trace.push(tl),
            Err(e) => {
                eprintln!("error: malformed trace line {}: {e}", n + 1);
                return ExitCode::from(2);
            }
        }
    }
    let analysis = match analyze_trace(&trace) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let status = if analysis.violations.is_empty() { "pass" } else { "fail" };
    let (rmr_cc, rmr_dsm) = trace
        .iter()
        .fold((0u64, 0u64), |(c, d), l| (c + u64::from(l.rmr_cc), d + u64::from(l.rmr_dsm)));
    let per = |total: u64| {
        if analysis.attempts == 0 { 0.0 } else { total as f64 / analysis.attempts as f64 }
    };
    let out = Report {
        params: serde_json::json!({ "trace": args.trace.display().to_string() }),
        totals: Totals {
            steps: trace.len() as u64,
            attempts: analysis.attempts,
            cs_entries: analysis.cs_entries,
            aborts: analysis.aborts,
            rmr_cc,
            rmr_dsm,
        },
        bounds: Bounds {
            rmr_cc_per_attempt: per(rmr_cc),
            rmr_dsm_per_attempt: per(rmr_dsm),
        },
        violations: analysis.violations.clone(),
        status: status.to_string(),
        explore: None,
        trace_analysis: Some(TraceStats::from(&analysis)),
        stress: None,
        error: None,
    };
    finish(out, args.report.as_deref())
}

fn cmd_stress(args: StressArgs) -> ExitCode {
    if !(0.0..=1.0).contains(&args.abort_prob) {
        eprintln!("error: --abort-prob must be within [0, 1]");
        return ExitCode::from(2);
    }
    if args.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let params = serde_json::json!({
        "threads": args.threads,
        "iters": args.iters,
        "abort_prob": args.abort_prob,
        "seed": args.seed,
    });
    match aqlock_native::stress(args.threads, args.iters, args.abort_prob, args.seed) {
        Ok(sr) => {
            let ok = sr.counter_matches();
            println!(
                "stress: {} cs entries, {} aborts, counter {} ({}), {} ms",
                sr.cs_entries,
                sr.aborts_completed,
                sr.counter_value,
                if ok { "exact" } else { "MISMATCH" },
                sr.wall_time_ms
            );
            let out = Report {
                params,
                totals: Totals {
                    steps: sr.cs_entries + sr.aborts_completed,
                    attempts: sr.cs_entries + sr.aborts_completed,
                    cs_entries: sr.cs_entries,
                    aborts: sr.aborts_completed,
                    rmr_cc: 0,
                    rmr_dsm: 0,
                },
                bounds: Bounds::default(),
                violations: vec![],
                status: if ok { "pass" } else { "fail" }.to_string(),
                explore: None,
                trace_analysis: None,
                stress: Some(sr),
                error: None,
            };
            let code = out.exit_code();
            if let Some(path) = &args.report {
                if let Err(e) = write_report(path, &out) {
                    eprintln!("error: cannot write report {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            let out = Report {
                params,
                totals: Totals::default(),
                bounds: Bounds::default(),
                violations: vec![],
                status: "fail".to_string(),
                explore: None,
                trace_analysis: None,
                stress: None,
                error: Some(e.to_string()),
            };
            if let Some(path) = &args.report {
                let _ = write_report(path, &out);
            }
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Explore(args) => cmd_explore(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Stress(args) => cmd_stress(args),
    }
}
