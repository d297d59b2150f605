//! End-to-end checks of the command-line surface: flag handling, exit codes,
//! report files, and the trace/replay round trip.

use std::fs;
use std::process::Command;

fn aqlock() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aqlock"))
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("aqlock-cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn simulate_single_process_single_attempt() {
    let report = tmp("sim1.json");
    let out = aqlock()
        .args(["simulate", "--procs", "1", "--attempts", "1", "--check", "all"])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["totals"]["cs_entries"], 1);
    assert_eq!(json["totals"]["attempts"], 1);
    assert_eq!(json["status"], "pass");
    assert_eq!(json["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn bad_flags_exit_with_usage_error() {
    let out = aqlock().args(["simulate", "--procs", "0x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = aqlock().args(["simulate", "--abort-rate", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = aqlock().args(["simulate", "--check", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn explore_small_space_passes() {
    let report = tmp("explore.json");
    let out = aqlock()
        .args(["explore", "--procs", "2", "--attempts", "1", "--aborts", "nondet"])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["status"], "pass");
    assert!(json["explore"]["states_visited"].as_u64().unwrap() > 5);
    assert_eq!(json["explore"]["complete"], true);
}

#[test]
fn explore_budget_exhaustion_reports_incomplete() {
    let report = tmp("explore_budget.json");
    let out = aqlock()
        .args(["explore", "--procs", "2", "--attempts", "2", "--aborts", "nondet"])
        .args(["--max-states", "50", "--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["status"], "incomplete");
}

#[test]
fn replay_reproduces_the_simulation_verdict() {
    let trace = tmp("roundtrip.jsonl");
    let sim_report = tmp("sim_rt.json");
    let replay_report = tmp("replay_rt.json");
    let out = aqlock()
        .args(["simulate", "--procs", "3", "--steps", "5000", "--seed", "9"])
        .args(["--abort-rate", "0.4", "--attempts", "20"])
        .args(["--trace", trace.to_str().unwrap(), "--report", sim_report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let out = aqlock()
        .args(["replay", "--trace", trace.to_str().unwrap(), "--check", "all"])
        .args(["--report", replay_report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let sim: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sim_report).unwrap()).unwrap();
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&replay_report).unwrap()).unwrap();
    assert_eq!(sim["status"], rep["status"]);
    assert_eq!(sim["violations"], rep["violations"]);
    assert_eq!(sim["totals"]["attempts"], rep["totals"]["attempts"]);
    assert_eq!(sim["totals"]["cs_entries"], rep["totals"]["cs_entries"]);
    assert_eq!(sim["totals"]["rmr_cc"], rep["totals"]["rmr_cc"]);
}

#[test]
fn forged_double_cs_entry_fails_replay() {
    let trace = tmp("forged.jsonl");
    let mk = |seq: u64, proc: u32, post_pc: u8, events: &str| {
        format!(
            "{{\"seq\":{seq},\"actor\":{proc},\"proc\":{proc},\"kind\":\"exec_line\",\"line\":3,\
             \"pre_pc\":3,\"post_pc\":{post_pc},\"rmr_cc\":1,\"rmr_dsm\":1,\"phi_cc\":0,\"phi_dsm\":0,\
             \"events\":[{events}],\"queue\":null}}"
        )
    };
    let lines = [
        mk(0, 1, 2, "\"attempt_start\""),
        mk(1, 2, 2, "\"attempt_start\""),
        mk(2, 1, 7, "\"doorway_complete\",\"cs_enter\""),
        mk(3, 2, 7, "\"doorway_complete\",\"cs_enter\""),
    ];
    fs::write(&trace, lines.join("\n")).unwrap();
    let out = aqlock()
        .args(["replay", "--trace", trace.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mutex"), "{stdout}");
}

#[test]
fn malformed_trace_is_a_usage_error() {
    let trace = tmp("garbage.jsonl");
    fs::write(&trace, "this is not json\n").unwrap();
    let out = aqlock().args(["replay", "--trace", trace.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let missing = tmp("does_not_exist.jsonl");
    let out = aqlock().args(["replay", "--trace", missing.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stress_subcommand_reports_counter_equality() {
    let report = tmp("stress.json");
    let out = aqlock()
        .args(["stress", "--threads", "4", "--iters", "500", "--abort-prob", "0.2", "--seed", "3"])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["status"], "pass");
    assert_eq!(
        json["stress"]["counter_value"].as_u64().unwrap(),
        json["stress"]["cs_entries"].as_u64().unwrap()
    );
}
