//! RMR cost accounting under the cache-coherent (CC) and distributed shared
//! memory (DSM) models, and the two potential functions used for the
//! amortized per-line bounds.
//!
//! DSM: every location has a fixed home partition; an access is remote iff
//! the home is not the actor's. CC: a read hits if the location is in the
//! actor's cache and otherwise costs one RMR and caches it; every non-read
//! costs one RMR and deletes the location from all caches (the writer does
//! not retain a copy).

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{Config, LocId, ProcId, Value};
use crate::semantics::{AccessKind, StepKind, StepRecord};

/// DSM cost of a step: one RMR iff the accessed location is homed outside the
/// actor's partition. Signal delivery and joins cost nothing.
pub fn dsm_cost(config: &Config, record: &StepRecord) -> u8 {
    match record.kind {
        StepKind::AbortSignal | StepKind::Join => 0,
        StepKind::ExecLine | StepKind::BusyWaitRead => {
            let mut rmr = 0;
            for access in &record.accesses {
                if config.locs[&access.loc].home != Some(record.proc) {
                    rmr += 1;
                }
            }
            rmr
        }
    }
}

/// CC cost of a step, together with the updated cache map.
pub fn cc_cost(
    caches: &BTreeMap<ProcId, BTreeSet<LocId>>,
    record: &StepRecord,
) -> (u8, BTreeMap<ProcId, BTreeSet<LocId>>) {
    match record.kind {
        StepKind::AbortSignal | StepKind::Join => (0, caches.clone()),
        StepKind::ExecLine | StepKind::BusyWaitRead => {
            let mut caches = caches.clone();
            let mut rmr = 0;
            for access in &record.accesses {
                match access.kind {
                    AccessKind::Read => {
                        let cache = caches.entry(record.proc).or_default();
                        if !cache.contains(&access.loc) {
                            rmr += 1;
                            cache.insert(access.loc);
                        }
                    }
                    AccessKind::Write | AccessKind::Swap => {
                        rmr += 1;
                        for cache in caches.values_mut() {
                            cache.remove(&access.loc);
                        }
                    }
                }
            }
            (rmr, caches)
        }
    }
}

/// True iff the word `p`'s mynode points at contains `p`'s pred address: the
/// mark an aborted process leaves so it can later reclaim its spot.
fn marked(config: &Config, p: ProcId) -> bool {
    let st = &config.procs[&p];
    config.words[&st.mynode] == Value::NodeRef(st.pred)
}

/// DSM potential: per process, one unit each for a raised go flag, for
/// sitting at line 6, and for a mark in its node. Zero initially.
pub fn phi_dsm(config: &Config) -> u64 {
    config
        .procs
        .keys()
        .map(|&p| {
            u64::from(config.go_flag(p))
                + u64::from(config.procs[&p].pc == 6)
                + u64::from(marked(config, p))
        })
        .sum()
}

/// CC potential: the raised go flag weighs three units (it also pays for the
/// reset write and the re-caching read), plus one unit when the process's own
/// go word is not in its cache. Zero initially under the cached-at-join
/// convention.
pub fn phi_cc(config: &Config) -> u64 {
    config
        .procs
        .keys()
        .map(|&p| {
            let notcached = !config.caches[&p].contains(&config.go_loc(p));
            3 * u64::from(config.go_flag(p))
                + u64::from(config.procs[&p].pc == 6)
                + u64::from(marked(config, p))
                + u64::from(notcached)
        })
        .sum()
}

/// Per-line amortized bound in the DSM model: rmr + delta-phi never exceeds
/// this.
pub fn alpha_dsm(line: u8) -> i64 {
    match line {
        1..=3 | 7 | 9 => 1,
        8 | 10 | 11 => 2,
        4..=6 => 0,
        other => unreachable!("no line {other}"),
    }
}

/// Per-line amortized bound in the CC model. Lines 8 and 11 can add three
/// units for the raised flag plus one for evicting the wakee's cached copy on
/// top of the write itself, so their constant is five.
pub fn alpha_cc(line: u8) -> i64 {
    match line {
        1..=3 | 7 | 9 => 1,
        10 => 2,
        8 | 11 => 5,
        4..=6 => 0,
        other => unreachable!("no line {other}"),
    }
}
