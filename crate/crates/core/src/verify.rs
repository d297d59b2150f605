//! Machine checks for every claim the lock's correctness argument rests on:
//! the twelve-clause configuration invariant, mutual exclusion, the
//! distance/promoter descent behind starvation freedom, the per-line
//! amortized RMR bounds under both cost models, and the whole-trace
//! properties (AFCFS, fast abort, bounded exit, conditional starvation).

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

use crate::cost::{alpha_cc, alpha_dsm, phi_cc, phi_dsm};
use crate::model::{derive_queue, Config, LocKind, ProcId, QueueView, Value};
use crate::semantics::{Action, Event, StepKind};
use crate::trace::TraceLine;

/// Which checked claim a violation falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    /// One of the twelve invariant clauses.
    Invariant(u8),
    QueueUnderivable,
    Mutex,
    /// Distance/promoter descent.
    Lemma2,
    /// DSM per-line amortized bound.
    Lemma3 { line: u8 },
    /// CC per-line amortized bound.
    Lemma4 { line: u8 },
    Afcfs,
    FastAbort,
    ExitBound,
    Starvation,
    /// The machine was driven outside its sound domain (mutations only).
    Soundness,
    /// A trace file that cannot be analyzed.
    MalformedTrace,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Invariant(i) => write!(f, "I{i}"),
            Clause::QueueUnderivable => write!(f, "queue-underivable"),
            Clause::Mutex => write!(f, "mutex"),
            Clause::Lemma2 => write!(f, "lemma2"),
            Clause::Lemma3 { line } => write!(f, "lemma3({line})"),
            Clause::Lemma4 { line } => write!(f, "lemma4({line})"),
            Clause::Afcfs => write!(f, "afcfs"),
            Clause::FastAbort => write!(f, "fast-abort"),
            Clause::ExitBound => write!(f, "exit-bound"),
            Clause::Starvation => write!(f, "starvation"),
            Clause::Soundness => write!(f, "soundness"),
            Clause::MalformedTrace => write!(f, "malformed-trace"),
        }
    }
}

impl Serialize for Clause {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// A failed check, with enough context to reproduce it: the step index within
/// the run and a hash of the offending configuration's canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub clause: Clause,
    pub step_seq: u64,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<u64>,
}

impl Violation {
    fn at_config(clause: Clause, config: &Config, detail: String) -> Self {
        let mut h = DefaultHasher::new();
        config.canonical_bytes().hash(&mut h);
        Violation { clause, step_seq: 0, detail, config_hash: Some(h.finish()) }
    }

    fn in_trace(clause: Clause, step_seq: u64, detail: String) -> Self {
        Violation { clause, step_seq, detail, config_hash: None }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.step_seq = seq;
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] step {}: {}", self.clause, self.step_seq, self.detail)
    }
}

fn word_of(config: &Config, p: ProcId) -> Value {
    config.words[&config.procs[&p].mynode]
}

/// Evaluates the twelve invariant clauses on a configuration, returning the
/// derived queue on success or the first failing clause (in I1..I12 order)
/// for deterministic diagnostics.
pub fn check_invariant(config: &Config) -> Result<QueueView, Violation> {
    let queue = derive_queue(config).map_err(|e| {
        Violation::at_config(Clause::QueueUnderivable, config, e.to_string())
    })?;
    let k = queue.k();
    let a = &queue.addrs;
    let q = &queue.procs;
    let fail = |clause: u8, detail: String| {
        Err(Violation::at_config(Clause::Invariant(clause), config, detail))
    };

    // I1-I3 hold by construction of the derivation; assert them anyway so a
    // derivation bug cannot silently pass.
    if config.tail() != a[k] {
        return fail(1, format!("tail is {} but a{k} is {}", config.tail(), a[k]));
    }
    for i in 1..=k {
        if config.procs[&q[i - 1]].mynode != a[i] {
            return fail(2, format!("mynode({}) != a{i}", q[i - 1]));
        }
        if config.procs[&q[i - 1]].pred != a[i - 1] {
            return fail(3, format!("pred({}) != a{}", q[i - 1], i - 1));
        }
    }

    // I4: the node set is exactly a0 plus the mynodes.
    let mynodes: BTreeSet<_> = config.procs.values().map(|st| st.mynode).collect();
    for node in config.node_locs() {
        if node != a[0] && !mynodes.contains(&node) {
            return fail(4, format!("node {node} is neither a0 nor any mynode"));
        }
    }
    if mynodes.contains(&a[0]) {
        return fail(4, format!("a0 {} is some process's mynode", a[0]));
    }

    // I5: every pred refers to a node.
    for (p, st) in &config.procs {
        if config.locs.get(&st.pred).map(|i| i.kind) != Some(LocKind::Node) {
            return fail(5, format!("pred({p}) = {} is not a node", st.pred));
        }
    }

    // I6: processes at lines 2 or 8 are outside the queue, with the stated
    // node contents.
    for (p, st) in &config.procs {
        if matches!(st.pc, 2 | 8) && queue.contains(*p) {
            return fail(6, format!("{p} at pc {} but in the queue", st.pc));
        }
        if st.pc == 2 && word_of(config, *p) != Value::Nil {
            return fail(6, format!("{p} at pc 2 with *mynode = {}", word_of(config, *p)));
        }
        if st.pc == 8 {
            let w = word_of(config, *p);
            if w != Value::Nil && w != Value::GoRef(*p) {
                return fail(6, format!("{p} at pc 8 with *mynode = {w}"));
            }
        }
    }

    // I7: node contents of queue members, tail and non-tail cases.
    for i in 1..=k {
        let p = q[i - 1];
        let pc = config.procs[&p].pc;
        let w = config.words[&a[i]];
        let is_tail = i == k;
        match pc {
            3..=7 | 9 | 10 => {
                let ok = if is_tail {
                    w == Value::Nil
                } else {
                    w == Value::Nil || w == Value::GoRef(q[i])
                };
                if !ok {
                    return fail(7, format!("q{i} = {p} at pc {pc} with *a{i} = {w}"));
                }
            }
            1 | 11 if w != Value::NodeRef(a[i - 1]) => {
                return fail(7, format!("q{i} = {p} at pc {pc} with *a{i} = {w}, not the mark"));
            }
            _ => {} // pc 2 and 8 cannot be in the queue; I6 reports those.
        }
    }

    // I8: processes outside the queue.
    for (p, st) in &config.procs {
        if !queue.contains(*p) {
            if !matches!(st.pc, 1 | 2 | 8 | 11) {
                return fail(8, format!("{p} outside queue at pc {}", st.pc));
            }
            if word_of(config, *p) == Value::NodeRef(st.pred) {
                return fail(8, format!("{p} outside queue but *mynode = pred"));
            }
        }
    }

    // I9: token placement at a0.
    let a0_word = config.words[&a[0]];
    if k == 0 || config.procs[&q[0]].pc != 7 {
        if a0_word != Value::Token {
            return fail(9, format!("*a0 = {a0_word}, expected token"));
        }
    } else if a0_word != Value::Nil && a0_word != Value::GoRef(q[0]) {
        return fail(9, format!("*a0 = {a0_word} while q1 = {} is at pc 7", q[0]));
    }

    // I10: only the front process may hold the CS slot.
    for (p, st) in &config.procs {
        if st.pc == 7 && q.first() != Some(p) {
            return fail(10, format!("{p} at pc 7 but q1 is {:?}", q.first()));
        }
    }

    // I11: the three wake-up clauses.
    if k >= 1 {
        let q1 = q[0];
        if config.procs[&q1].pc == 4 && !config.go_flag(q1) {
            let waker = config
                .procs
                .iter()
                .any(|(_, st)| st.pc == 8 && st.temp == Value::GoRef(q1));
            if !waker {
                return fail(11, format!("q1 = {q1} blocked but no process at pc 8 holds &go({q1})"));
            }
        }
    }
    for i in 2..=k {
        let qi = q[i - 1];
        if config.procs[&qi].pc == 4 && !config.go_flag(qi) {
            let prev = q[i - 2];
            let prev_st = &config.procs[&prev];
            let w = config.words[&a[i - 1]];
            let deposited = w == Value::GoRef(qi);
            let pending_waker = w == Value::NodeRef(prev_st.pred)
                && prev_st.pc == 11
                && prev_st.temp == Value::GoRef(qi);
            if !deposited && !pending_waker {
                return fail(
                    11,
                    format!("q{i} = {qi} blocked, *a{} = {w}, q{} = {prev} at pc {}", i - 1, i - 1, prev_st.pc),
                );
            }
        }
    }
    for (p, st) in &config.procs {
        if matches!(st.pc, 8 | 11) {
            let ok = matches!(st.temp, Value::GoRef(q) if config.is_joined(q));
            if !ok {
                return fail(11, format!("{p} at pc {} with temp = {}", st.pc, st.temp));
            }
        }
    }

    // I12: line 5 is only reached with the flag raised.
    for (p, st) in &config.procs {
        if st.pc == 5 && !config.go_flag(*p) {
            return fail(12, format!("{p} at pc 5 with go = false"));
        }
    }

    Ok(queue)
}

/// Why the digit function, distance, or promoters are unavailable.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeltaError {
    #[error("f is undefined at pc {pc}")]
    FUndefined { pc: u8 },
    /// The minimal awake queue member sits at pc 11, for which the digit
    /// function is undefined. Reachable; reported rather than guessed.
    #[error("q{position} = {member} is the minimal awake member but sits at pc 11")]
    MinimalMemberAtPc11 { member: ProcId, position: usize },
    #[error("{proc} has pc {pc}, outside the distance domain")]
    BadPc { proc: ProcId, pc: u8 },
    #[error("{proc} is not in the queue")]
    NotInQueue { proc: ProcId },
}

/// The digit the descent argument assigns to a queue member.
pub fn f_value(config: &Config, r: ProcId) -> Result<u8, DeltaError> {
    let st = &config.procs[&r];
    match st.pc {
        1 => Ok(3),
        3 => Ok(2),
        4 => Ok(if config.go_flag(r) { 8 } else { 9 }),
        5 => Ok(7),
        6 => Ok(2),
        7 => Ok(1),
        9 => Ok(6),
        10 => Ok(5),
        pc => Err(DeltaError::FUndefined { pc }),
    }
}

/// A distance from the CS: a short sequence of decimal digits compared
/// numerically. The leading digit is never zero, so (length, lexicographic)
/// ordering coincides with numeric comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distance {
    pub digits: Vec<u8>,
}

impl PartialOrd for Distance {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Distance {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.digits
            .len()
            .cmp(&other.digits.len())
            .then_with(|| self.digits.cmp(&other.digits))
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.digits {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl Distance {
    pub fn value(&self) -> u64 {
        self.digits.iter().fold(0, |acc, &d| acc * 10 + u64::from(d))
    }
}

/// Position of `p` and the index `m` of the first queue member not idling in
/// the remainder section.
fn queue_indices(
    config: &Config,
    queue: &QueueView,
    p: ProcId,
) -> Result<(usize, usize), DeltaError> {
    let pc = config.procs[&p].pc;
    if !matches!(pc, 3..=7) {
        return Err(DeltaError::BadPc { proc: p, pc });
    }
    let i = queue.position(p).ok_or(DeltaError::NotInQueue { proc: p })?;
    let m = (1..=i)
        .find(|&j| config.procs[&queue.procs[j - 1]].pc != 1)
        .expect("p itself is not at pc 1");
    Ok((i, m))
}

/// Distance of `p` from the CS, computed against an already-derived queue.
pub fn delta_in(config: &Config, queue: &QueueView, p: ProcId) -> Result<Distance, DeltaError> {
    let (i, m) = queue_indices(config, queue, p)?;
    let qm = queue.procs[m - 1];
    let fm = f_value(config, qm).map_err(|e| match e {
        DeltaError::FUndefined { pc: 11 } => {
            DeltaError::MinimalMemberAtPc11 { member: qm, position: m }
        }
        other => other,
    })?;
    let digits = (1..=i)
        .map(|j| match j.cmp(&m) {
            std::cmp::Ordering::Less => 3,
            std::cmp::Ordering::Equal => fm,
            std::cmp::Ordering::Greater => 0,
        })
        .collect();
    Ok(Distance { digits })
}

/// Distance of `p` from the CS.
pub fn delta(config: &Config, p: ProcId) -> Result<Distance, DeltaError> {
    let queue = derive_queue(config).map_err(|_| DeltaError::NotInQueue { proc: p })?;
    delta_in(config, &queue, p)
}

/// The processes whose next step is guaranteed to decrease `p`'s distance.
pub fn promoters_in(
    config: &Config,
    queue: &QueueView,
    p: ProcId,
) -> Result<BTreeSet<ProcId>, DeltaError> {
    let (_, m) = queue_indices(config, queue, p)?;
    let qm = queue.procs[m - 1];
    if config.procs[&qm].pc == 4 && !config.go_flag(qm) {
        Ok(config
            .procs
            .iter()
            .filter(|(_, st)| matches!(st.pc, 8 | 11) && st.temp == Value::GoRef(qm))
            .map(|(&r, _)| r)
            .collect())
    } else {
        Ok(BTreeSet::from([qm]))
    }
}

/// The promoter set of `p`.
pub fn promoters(config: &Config, p: ProcId) -> Result<BTreeSet<ProcId>, DeltaError> {
    let queue = derive_queue(config).map_err(|_| DeltaError::NotInQueue { proc: p })?;
    promoters_in(config, &queue, p)
}

/// Bookkeeping from a progress check: how many distance comparisons had to be
/// skipped because the minimal awake member sat at pc 11 (where the digit
/// function is undefined).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProgressStats {
    pub pc11_skips: u64,
}

/// Checks the descent lemma across one transition: a promoter's step strictly
/// decreases every waiter's distance; any other step leaves distance and
/// promoters unchanged or decreases the distance.
pub fn check_progress_step(
    before: &Config,
    action: Action,
    after: &Config,
) -> Result<ProgressStats, Violation> {
    let q_before = derive_queue(before).map_err(|e| {
        Violation::at_config(Clause::QueueUnderivable, before, e.to_string())
    })?;
    let q_after = derive_queue(after).map_err(|e| {
        Violation::at_config(Clause::QueueUnderivable, after, e.to_string())
    })?;
    let actor = match action {
        Action::Step(p) => Some(p),
        _ => None,
    };
    let mut stats = ProgressStats::default();

    for (&p, st) in &before.procs {
        if !matches!(st.pc, 3..=6) {
            continue;
        }
        // Processes that left the waiting set (entered the CS or jumped to
        // the abort path) are exempt.
        if !matches!(after.procs[&p].pc, 3..=6) {
            continue;
        }
        let d_before = match delta_in(before, &q_before, p) {
            Ok(d) => d,
            Err(DeltaError::MinimalMemberAtPc11 { .. }) => {
                stats.pc11_skips += 1;
                continue;
            }
            Err(e) => {
                return Err(Violation::at_config(Clause::Lemma2, before, e.to_string()));
            }
        };
        let d_after = match delta_in(after, &q_after, p) {
            Ok(d) => d,
            Err(DeltaError::MinimalMemberAtPc11 { .. }) => {
                stats.pc11_skips += 1;
                continue;
            }
            Err(e) => {
                return Err(Violation::at_config(Clause::Lemma2, after, e.to_string()));
            }
        };
        let psi_before = promoters_in(before, &q_before, p)
            .map_err(|e| Violation::at_config(Clause::Lemma2, before, e.to_string()))?;

        if actor.is_some_and(|a| psi_before.contains(&a)) {
            if d_after >= d_before {
                return Err(Violation::at_config(
                    Clause::Lemma2,
                    after,
                    format!(
                        "promoter {} stepped but delta({p}) went {d_before} -> {d_after}",
                        actor.unwrap()
                    ),
                ));
            }
        } else if d_after > d_before {
            return Err(Violation::at_config(
                Clause::Lemma2,
                after,
                format!("delta({p}) increased {d_before} -> {d_after} on a non-promoter step"),
            ));
        } else if d_after == d_before {
            let psi_after = promoters_in(after, &q_after, p)
                .map_err(|e| Violation::at_config(Clause::Lemma2, after, e.to_string()))?;
            if psi_after != psi_before {
                return Err(Violation::at_config(
                    Clause::Lemma2,
                    after,
                    format!(
                        "delta({p}) stayed {d_before} but promoters changed {psi_before:?} -> {psi_after:?}"
                    ),
                ));
            }
        }
    }
    Ok(stats)
}

/// Checks the minimum-distance law on a configuration: every process in the
/// try section or holding the CS slot has distance at least 1, equal to 1
/// exactly at pc 7.
pub fn check_min_distance(config: &Config, queue: &QueueView) -> Result<ProgressStats, Violation> {
    let mut stats = ProgressStats::default();
    for (&p, st) in &config.procs {
        if !matches!(st.pc, 3..=7) {
            continue;
        }
        match delta_in(config, queue, p) {
            Ok(d) => {
                let at_cs = st.pc == 7;
                if d.value() < 1 || (d.value() == 1) != at_cs {
                    return Err(Violation::at_config(
                        Clause::Lemma2,
                        config,
                        format!("delta({p}) = {d} with pc {}", st.pc),
                    ));
                }
            }
            Err(DeltaError::MinimalMemberAtPc11 { .. }) => stats.pc11_skips += 1,
            Err(e) => {
                return Err(Violation::at_config(Clause::Lemma2, config, e.to_string()));
            }
        }
    }
    Ok(stats)
}

/// Checks both per-line amortized bounds on one transition:
/// rmr + (phi_after - phi_before) <= alpha(line) for each model.
pub fn check_amortized_step(
    before: &Config,
    after: &Config,
    line: Option<u8>,
    rmr_cc: u8,
    rmr_dsm: u8,
) -> Result<(), Violation> {
    // Signal delivery and joins carry no budget: they must be free and leave
    // both potentials unchanged.
    let (bound_dsm, bound_cc) = match line {
        Some(l) => (alpha_dsm(l), alpha_cc(l)),
        None => (0, 0),
    };
    let d_dsm = phi_dsm(after) as i64 - phi_dsm(before) as i64;
    if i64::from(rmr_dsm) + d_dsm > bound_dsm {
        return Err(Violation::at_config(
            Clause::Lemma3 { line: line.unwrap_or(0) },
            after,
            format!("rmr {rmr_dsm} + dphi {d_dsm} > {bound_dsm}"),
        ));
    }
    let d_cc = phi_cc(after) as i64 - phi_cc(before) as i64;
    if i64::from(rmr_cc) + d_cc > bound_cc {
        return Err(Violation::at_config(
            Clause::Lemma4 { line: line.unwrap_or(0) },
            after,
            format!("rmr {rmr_cc} + dphi {d_cc} > {bound_cc}"),
        ));
    }
    Ok(())
}

/// Report of a whole-trace analysis.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TraceReport {
    pub violations: Vec<Violation>,
    pub attempts: u64,
    pub passages: u64,
    pub cs_entries: u64,
    pub aborts: u64,
    pub abort_signals: u64,
    /// Worst observed own-step counts, for the constant-time claims.
    pub max_abort_steps: u64,
    pub max_exit_steps: u64,
}

impl TraceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace malformed at seq {seq}: {detail}")]
    Malformed { seq: u64, detail: String },
}

#[derive(Debug, Clone)]
struct AttemptInfo {
    start: u64,
    doorway: Option<u64>,
    cs_enter: Option<u64>,
    signaled: bool,
    end: Option<Event>,
}

#[derive(Debug, Default)]
struct ProcTimeline {
    pc: u8,
    in_cs: bool,
    open: Option<AttemptInfo>,
    attempts: Vec<AttemptInfo>,
    /// (seq, kind, post_pc) of the process's own records, for step-count walks.
    records: Vec<(u64, StepKind, u8)>,
    /// Indices into `records` where a signal was delivered in the try section.
    signal_marks: Vec<usize>,
    /// Indices into `records` of CS exits.
    exit_marks: Vec<usize>,
}

/// One passage: a maximal run of attempts ending in a successful one (or in
/// the trace end).
#[derive(Debug, Clone)]
struct Passage {
    proc: ProcId,
    first_start: u64,
    last_doorway: Option<u64>,
    cs_enter: Option<u64>,
}

/// Analyzes a complete trace offline: mutual exclusion, AFCFS, fast abort,
/// exit bound, and structural starvation freedom.
pub fn analyze_trace(lines: &[TraceLine]) -> Result<TraceReport, TraceError> {
    let mut report = TraceReport::default();
    let mut procs: BTreeMap<ProcId, ProcTimeline> = BTreeMap::new();
    let mut in_cs_count: u32 = 0;
    let mut at_pc7: u32 = 0;
    let mut last_seq: Option<u64> = None;

    let malformed = |seq: u64, detail: String| TraceError::Malformed { seq, detail };

    for line in lines {
        if last_seq.is_some_and(|s| line.seq <= s) {
            return Err(malformed(line.seq, "seq not strictly increasing".into()));
        }
        last_seq = Some(line.seq);
        let tl = procs.entry(line.proc).or_insert_with(|| ProcTimeline { pc: 1, ..Default::default() });

        // Track pc occupancy of the CS slot from the recorded counters.
        if tl.pc == 7 && line.post_pc != 7 {
            at_pc7 -= 1;
        } else if tl.pc != 7 && line.post_pc == 7 {
            at_pc7 += 1;
        }
        tl.pc = line.post_pc;
        tl.records.push((line.seq, line.kind, line.post_pc));
        let rec_idx = tl.records.len() - 1;

        for ev in &line.events {
            match ev {
                Event::AttemptStart => {
                    if tl.open.is_some() {
                        return Err(malformed(line.seq, format!("{} started a nested attempt", line.proc)));
                    }
                    report.attempts += 1;
                    tl.open = Some(AttemptInfo {
                        start: line.seq,
                        doorway: None,
                        cs_enter: None,
                        signaled: false,
                        end: None,
                    });
                }
                Event::DoorwayComplete => {
                    let open = tl.open.as_mut().ok_or_else(|| {
                        malformed(line.seq, format!("doorway outside an attempt of {}", line.proc))
                    })?;
                    open.doorway = Some(line.seq);
                }
                Event::CsEnter => {
                    let open = tl.open.as_mut().ok_or_else(|| {
                        malformed(line.seq, format!("cs_enter outside an attempt of {}", line.proc))
                    })?;
                    open.cs_enter = Some(line.seq);
                    report.cs_entries += 1;
                    if tl.in_cs {
                        report.violations.push(Violation::in_trace(
                            Clause::Mutex,
                            line.seq,
                            format!("{} entered the CS twice without exiting", line.proc),
                        ));
                    } else {
                        tl.in_cs = true;
                        in_cs_count += 1;
                    }
                }
                Event::CsExit => {
                    if tl.in_cs {
                        tl.in_cs = false;
                        in_cs_count -= 1;
                    } else {
                        return Err(malformed(line.seq, format!("cs_exit without cs_enter by {}", line.proc)));
                    }
                    tl.exit_marks.push(rec_idx);
                }
                Event::AttemptEndSuccess | Event::AttemptEndAbort => {
                    let mut open = tl.open.take().ok_or_else(|| {
                        malformed(line.seq, format!("attempt end without start for {}", line.proc))
                    })?;
                    open.end = Some(*ev);
                    if *ev == Event::AttemptEndAbort {
                        report.aborts += 1;
                    }
                    tl.attempts.push(open);
                }
                Event::AbortSignal => {
                    report.abort_signals += 1;
                    if let Some(open) = tl.open.as_mut() {
                        open.signaled = true;
                    }
                    // Fast abort binds for signals landing in the try section.
                    if matches!(line.pre_pc, 2..=6) {
                        tl.signal_marks.push(rec_idx);
                    }
                }
            }
        }

        if in_cs_count > 1 {
            report.violations.push(Violation::in_trace(
                Clause::Mutex,
                line.seq,
                format!("{in_cs_count} processes in the CS"),
            ));
        }
        if at_pc7 > 1 {
            report.violations.push(Violation::in_trace(
                Clause::Mutex,
                line.seq,
                format!("{at_pc7} processes at pc 7"),
            ));
        }
    }

    // Close incomplete last attempts.
    for tl in procs.values_mut() {
        if let Some(open) = tl.open.take() {
            tl.attempts.push(open);
        }
    }

    // Fast abort: from signal delivery, the aborter reaches the remainder
    // within six of its own shared-memory steps.
    for (&p, tl) in &procs {
        for &mark in &tl.signal_marks {
            let mut steps = 0u64;
            let mut reached = false;
            for &(_, kind, post_pc) in &tl.records[mark + 1..] {
                if kind == StepKind::ExecLine || kind == StepKind::BusyWaitRead {
                    steps += 1;
                }
                if post_pc == 1 {
                    reached = true;
                    break;
                }
                if steps > 6 {
                    break;
                }
            }
            if reached {
                report.max_abort_steps = report.max_abort_steps.max(steps);
            }
            if steps > 6 {
                report.violations.push(Violation::in_trace(
                    Clause::FastAbort,
                    tl.records[mark].0,
                    format!("{p} took more than 6 steps to reach the remainder after a signal"),
                ));
            }
        }
        // Exit bound: from the CS exit, at most two shared steps to pc 1.
        for &mark in &tl.exit_marks {
            let mut steps = 0u64;
            let mut reached = false;
            for &(_, kind, post_pc) in &tl.records[mark..] {
                if kind == StepKind::ExecLine {
                    steps += 1;
                }
                if post_pc == 1 {
                    reached = true;
                    break;
                }
                if steps > 2 {
                    break;
                }
            }
            if reached {
                report.max_exit_steps = report.max_exit_steps.max(steps);
            }
            if steps > 2 {
                report.violations.push(Violation::in_trace(
                    Clause::ExitBound,
                    tl.records[mark].0,
                    format!("{p} took more than 2 shared steps to finish the exit section"),
                ));
            }
        }
    }

    // Starvation (structural form): a completed attempt that was never
    // signaled must have entered the CS.
    for (&p, tl) in &procs {
        for a in &tl.attempts {
            if a.end.is_some() && !a.signaled && a.cs_enter.is_none() {
                report.violations.push(Violation::in_trace(
                    Clause::Starvation,
                    a.start,
                    format!("{p} completed an unsignaled attempt without entering the CS"),
                ));
            }
        }
    }

    // AFCFS over passages: if the doorway of pi's last attempt precedes the
    // start of pi', then pi enters the CS first. Binding only when both
    // passages contain a CS entry.
    let mut passages: Vec<Passage> = vec![];
    for (&p, tl) in &procs {
        let mut current: Option<Passage> = None;
        for a in &tl.attempts {
            let cur = current.get_or_insert(Passage {
                proc: p,
                first_start: a.start,
                last_doorway: None,
                cs_enter: None,
            });
            cur.last_doorway = a.doorway;
            if a.cs_enter.is_some() {
                cur.cs_enter = a.cs_enter;
            }
            if a.end == Some(Event::AttemptEndSuccess) {
                passages.push(current.take().unwrap());
            }
        }
        if let Some(cur) = current.take() {
            passages.push(cur);
        }
    }
    report.passages = passages.len() as u64;

    let mut binding: Vec<&Passage> = passages
        .iter()
        .filter(|pg| pg.cs_enter.is_some() && pg.last_doorway.is_some())
        .collect();
    // Sweep in descending CS order, keeping the earliest doorway completion
    // among later entrants (per process, so a process never "overtakes"
    // itself).
    binding.sort_by_key(|pg| std::cmp::Reverse(pg.cs_enter.unwrap()));
    let mut best: Option<&Passage> = None;
    let mut second: Option<&Passage> = None;
    for pg in binding {
        let rival = match best {
            Some(b) if b.proc == pg.proc => second,
            other => other,
        };
        if let Some(earlier) = rival {
            if earlier.last_doorway.unwrap() < pg.first_start {
                report.violations.push(Violation::in_trace(
                    Clause::Afcfs,
                    pg.cs_enter.unwrap(),
                    format!(
                        "{} entered the CS at {} although {} completed its doorway at {} before {} started at {}",
                        pg.proc,
                        pg.cs_enter.unwrap(),
                        earlier.proc,
                        earlier.last_doorway.unwrap(),
                        pg.proc,
                        pg.first_start
                    ),
                ));
            }
        }
        let dw = pg.last_doorway.unwrap();
        match best {
            None => best = Some(pg),
            Some(b) if dw < b.last_doorway.unwrap() => {
                if b.proc != pg.proc {
                    second = Some(b);
                }
                best = Some(pg);
            }
            Some(b) => {
                if b.proc != pg.proc
                    && second.is_none_or(|s| dw < s.last_doorway.unwrap())
                {
                    second = Some(pg);
                }
            }
        }
    }

    Ok(report)
}
