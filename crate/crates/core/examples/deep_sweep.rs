//! Deep exhaustive sweep of spaces beyond the acceptance bounds.
use aqlock_core::explore::{explore, ScheduleParams, SchedulerKind};

fn main() {
    for (procs, attempts) in [(2u32, 3u32), (4, 1), (3, 2)] {
        let params = ScheduleParams {
            procs,
            scheduler: SchedulerKind::Exhaustive,
            nondet_aborts: true,
            attempts_per_proc: Some(attempts),
            ..Default::default()
        };
        let r = explore(&params);
        println!(
            "procs={procs} attempts={attempts}: states={} transitions={} pc11_skips={} complete={} violations={} elapsed={}ms",
            r.states_visited, r.transitions, r.delta_pc11_skips, r.complete, r.violations.len(), r.elapsed_ms
        );
        for v in r.violations.iter().take(3) {
            println!("  {v}");
        }
    }
}
