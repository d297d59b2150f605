//! Acceptance suite: one test per acceptance criterion, each printing a
//! single PASS/FAIL line (visible with `--nocapture`). The random-run corpus
//! is shared across criteria through a lazily built static.
//!
//! Run with: cargo test -p aqlock-cli --test acceptance -- --nocapture

use std::fs;
use std::process::Command;
use std::sync::OnceLock;

use aqlock_core::explore::{explore, run, Checks, ExploreReport, ScheduleParams, SchedulerKind};
use aqlock_core::model::{derive_queue, initial_config, ProcId};
use aqlock_core::semantics::{step, Action, Event};
use aqlock_core::trace::TraceLine;
use aqlock_core::verify::{analyze_trace, Clause, TraceReport};
use aqlock_core::Mutation;

struct RunOutcome {
    seed: u64,
    rate: f64,
    report: ExploreReport,
    analysis: TraceReport,
}

/// Twenty seeded random runs, 8 processes, 100k steps, abort rates cycling
/// through {0, 0.2, 0.9}.
fn corpus() -> &'static [RunOutcome] {
    static CORPUS: OnceLock<Vec<RunOutcome>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let rates = [0.0, 0.2, 0.9];
        (0..20u64)
            .map(|i| {
                let rate = rates[(i % 3) as usize];
                let params = ScheduleParams {
                    procs: 8,
                    scheduler: SchedulerKind::Random,
                    seed: 100 + i,
                    max_steps: 100_000,
                    abort_rate: rate,
                    attempts_per_proc: None,
                    weak_fairness: true,
                    // Trace analysis runs separately so its statistics are
                    // kept; the per-step checks stay online.
                    checks: Checks { trace: false, ..Checks::all() },
                    ..Default::default()
                };
                let (trace, report) = run(&params);
                let analysis = analyze_trace(&trace).expect("well-formed trace");
                RunOutcome { seed: params.seed, rate, report, analysis }
            })
            .collect()
    })
}

fn explore_via_cli(procs: u32, attempts: u32) -> serde_json::Value {
    let report_path = std::env::temp_dir().join(format!(
        "aqlock-acceptance-{}-{procs}-{attempts}.json",
        std::process::id()
    ));
    let out = Command::new(env!("CARGO_BIN_EXE_aqlock"))
        .args(["explore", "--procs", &procs.to_string(), "--attempts", &attempts.to_string()])
        .args(["--aborts", "nondet", "--report", report_path.to_str().unwrap()])
        .output()
        .expect("explore runs");
    assert_eq!(out.status.code(), Some(0), "explore exit: {out:?}");
    serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap()
}

/// Exhaustive correctness: the full bounded reachable spaces of 2 processes
/// with 2 attempts and 3 processes with 1 attempt hold every invariant
/// clause, mutual exclusion, the descent lemma, and both per-step amortized
/// bounds, with zero violations.
#[test]
fn exhaustive_correctness() {
    for (procs, attempts) in [(2u32, 2u32), (3, 1)] {
        let json = explore_via_cli(procs, attempts);
        assert_eq!(json["status"], "pass", "({procs},{attempts}): {json}");
        assert_eq!(json["violations"].as_array().unwrap().len(), 0);
        assert_eq!(json["explore"]["complete"], true);
        let states = json["explore"]["states_visited"].as_u64().unwrap();
        let skips = json["explore"]["delta_pc11_skips"].as_u64().unwrap();
        println!(
            "ACCEPTANCE exhaustive-correctness ({procs} procs, {attempts} attempts): PASS \
             ({states} states, pc11 distance gaps reported {skips} times)"
        );
    }
}

/// Amortized RMR at desk scale: every corpus run stays within the telescoped
/// constants (DSM <= 8 per attempt, CC <= 10 per attempt) and passes the
/// per-step inequality checks on 100% of steps.
#[test]
fn amortized_rmr_desk_scale() {
    for r in corpus() {
        assert!(
            r.report.violations.is_empty(),
            "seed {} rate {}: {:?}",
            r.seed,
            r.rate,
            r.report.violations
        );
        let attempts = r.report.attempts_total;
        assert!(attempts > 0);
        assert!(
            r.report.rmr_dsm_total <= 8 * attempts,
            "seed {}: dsm {} > 8 x {attempts}",
            r.seed,
            r.report.rmr_dsm_total
        );
        assert!(
            r.report.rmr_cc_total <= 10 * attempts,
            "seed {}: cc {} > 10 x {attempts}",
            r.seed,
            r.report.rmr_cc_total
        );
    }
    let worst_cc = corpus()
        .iter()
        .map(|r| r.report.rmr_cc_total as f64 / r.report.attempts_total as f64)
        .fold(0.0, f64::max);
    let worst_dsm = corpus()
        .iter()
        .map(|r| r.report.rmr_dsm_total as f64 / r.report.attempts_total as f64)
        .fold(0.0, f64::max);
    println!(
        "ACCEPTANCE amortized-rmr (20 runs, 8 procs, 1e5 steps): PASS \
         (worst cc/attempt {worst_cc:.3} <= 10, worst dsm/attempt {worst_dsm:.3} <= 8)"
    );
}

/// Fast Abort and Exit bounds: every abort completes within 6 of the
/// aborter's shared steps from signal delivery and every exit within 2;
/// exact, no exceptions.
#[test]
fn fast_abort_and_exit_bounds() {
    let mut max_abort = 0;
    let mut max_exit = 0;
    let mut signals = 0;
    for r in corpus() {
        assert!(
            !r.analysis
                .violations
                .iter()
                .any(|v| matches!(v.clause, Clause::FastAbort | Clause::ExitBound)),
            "seed {}: {:?}",
            r.seed,
            r.analysis.violations
        );
        max_abort = max_abort.max(r.analysis.max_abort_steps);
        max_exit = max_exit.max(r.analysis.max_exit_steps);
        signals += r.analysis.abort_signals;
    }
    assert!(signals > 0, "the corpus must exercise aborts");
    assert!(max_abort <= 6, "worst abort took {max_abort} steps");
    assert!(max_exit <= 2, "worst exit took {max_exit} steps");
    println!(
        "ACCEPTANCE fast-abort-and-exit: PASS \
         ({signals} signals, worst abort {max_abort} <= 6 steps, worst exit {max_exit} <= 2 steps)"
    );
}

/// AFCFS: the trace analyzer finds no first-come-first-served violations in
/// any corpus run, and the directed reclaim scenario shows an aborter that
/// re-enters in time taking back its original queue position.
#[test]
fn afcfs_and_airline_reclaim() {
    for r in corpus() {
        assert!(
            !r.analysis.violations.iter().any(|v| v.clause == Clause::Afcfs),
            "seed {}: {:?}",
            r.seed,
            r.analysis.violations
        );
    }

    // Directed scenario: p1 holds the CS, p2 waits behind it, aborts, and
    // re-enters before anyone touches its node.
    let (p1, p2) = (ProcId(1), ProcId(2));
    let mut config = initial_config(&[p1, p2]).unwrap();
    let mut trace: Vec<TraceLine> = vec![];
    let mut seq = 0;
    let mut drive = |config: &mut aqlock_core::Config, action: Action| {
        let mut r = step(config, action).unwrap();
        r.record.seq = seq;
        seq += 1;
        let queue = derive_queue(&r.config).ok().map(|q| q.procs);
        trace.push(TraceLine::assemble(r.record, 0, 0, 0, 0, queue));
        *config = r.config;
    };
    for _ in 0..3 {
        drive(&mut config, Action::Step(p1)); // p1 through the doorway into the CS
    }
    for _ in 0..3 {
        drive(&mut config, Action::Step(p2)); // p2 queues up and waits
    }
    let before = derive_queue(&config).unwrap();
    assert_eq!(before.position(p2), Some(2));
    drive(&mut config, Action::AbortSignal(p2));
    drive(&mut config, Action::Step(p2)); // abort line 9
    drive(&mut config, Action::Step(p2)); // abort line 10, back to remainder
    assert_eq!(config.proc(p2).pc, 1);
    assert_eq!(derive_queue(&config).unwrap().position(p2), Some(2), "marked node keeps the spot");
    drive(&mut config, Action::Step(p2)); // line 1 reclaims in one step
    let after = derive_queue(&config).unwrap();
    assert_eq!(after.position(p2), Some(2), "reclaim restored the original position");
    assert_eq!(config.proc(p2).pc, 3);
    // Let both finish: p2 re-deposits, p1 leaves and wakes p2, p2 enters.
    drive(&mut config, Action::Step(p2)); // line 3
    drive(&mut config, Action::Step(p1)); // line 7
    drive(&mut config, Action::Step(p1)); // line 8
    drive(&mut config, Action::Step(p2)); // line 4 sees true
    drive(&mut config, Action::Step(p2)); // line 5
    drive(&mut config, Action::Step(p2)); // line 6 finds the token
    drive(&mut config, Action::Step(p2)); // line 7
    let reclaim_seq = 9; // the line-1 step that took the spot back
    assert!(trace[reclaim_seq].events.contains(&Event::DoorwayComplete));
    let p2_entry = trace
        .iter()
        .find(|l| l.proc == p2 && l.events.contains(&Event::CsEnter))
        .expect("p2 entered the CS");
    assert!(p2_entry.seq > trace[reclaim_seq].seq);
    let analysis = analyze_trace(&trace).unwrap();
    assert!(analysis.violations.is_empty(), "{:?}", analysis.violations);
    assert_eq!(analysis.cs_entries, 2);
    println!(
        "ACCEPTANCE afcfs-and-airline-reclaim: PASS \
         (corpus clean; aborter reclaimed queue position 2 and entered the CS)"
    );
}

/// Starvation freedom, empirically: under the weakly fair random scheduler
/// with abort rate 0.5 and 4 processes, every completed unsignaled attempt
/// enters the CS, and the distance checks hold on every transition.
#[test]
fn starvation_freedom_empirical() {
    let mut pc11_skips = 0;
    for seed in 200..206u64 {
        let params = ScheduleParams {
            procs: 4,
            scheduler: SchedulerKind::Random,
            seed,
            max_steps: 50_000,
            abort_rate: 0.5,
            weak_fairness: true,
            checks: Checks::all(),
            ..Default::default()
        };
        let (_, report) = run(&params);
        assert!(report.passed(), "seed {seed}: {:?}", report.violations);
        assert!(report.cs_entries > 0);
        pc11_skips += report.delta_pc11_skips;
    }
    println!(
        "ACCEPTANCE starvation-freedom (4 procs, abort rate 0.5, weakly fair): PASS \
         (distance non-increase verified on all transitions; {pc11_skips} pc11 gaps reported)"
    );
}

/// Mutation sensitivity: three single-line faults are each caught by the
/// exhaustive explorer, so the checkers are not vacuous.
#[test]
fn mutation_sensitivity() {
    let cases = [
        (Mutation::Line10WritesNil, "line 10 writes nil"),
        (Mutation::Line5Skipped, "line 5 omitted"),
        (Mutation::Line9WritesToken, "line 9 writes token"),
    ];
    let mut caught = vec![];
    for (mutation, label) in cases {
        let params = ScheduleParams {
            procs: 2,
            scheduler: SchedulerKind::Exhaustive,
            nondet_aborts: true,
            attempts_per_proc: Some(2),
            mutation: Some(mutation),
            ..Default::default()
        };
        let report = explore(&params);
        assert!(!report.violations.is_empty(), "{label} went undetected");
        caught.push(format!("{label} -> {}", report.violations[0].clause));
    }
    println!("ACCEPTANCE mutation-sensitivity: PASS ({})", caught.join("; "));
}

/// Native lock stress: 8 threads x 10^4 iterations at abort probabilities
/// {0, 0.2, 0.8} finish without deadlock, the CS counter matches the entry
/// count exactly, and the memory footprint is exactly n nodes + n go words
/// + sentinel + tail.
#[test]
fn native_lock_stress() {
    let mut summary = vec![];
    for (prob, seed) in [(0.0, 31u64), (0.2, 32), (0.8, 33)] {
        let report = aqlock_native::stress(8, 10_000, prob, seed).expect("no deadlock");
        assert!(
            report.counter_matches(),
            "prob {prob}: counter {} != cs {}",
            report.counter_value,
            report.cs_entries
        );
        assert_eq!(report.cs_entries + report.aborts_completed, 80_000);
        assert_eq!(report.memory.registered_threads, 8);
        assert_eq!(report.memory.node_words, 9);
        assert_eq!(report.memory.go_words, 8);
        assert_eq!(report.memory.tail_words, 1);
        summary.push(format!(
            "p={prob}: {} cs / {} aborts in {} ms",
            report.cs_entries, report.aborts_completed, report.wall_time_ms
        ));
    }
    println!(
        "ACCEPTANCE native-lock-stress: PASS (counter exact, memory 8+1 nodes / 8 go / 1 tail; {})",
        summary.join("; ")
    );
}
