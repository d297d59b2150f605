//! Line-accurate small-step interpreter of the abortable queue lock.
//!
//! Each numbered line performs exactly one shared-memory operation; the local
//! actions attached to a line (condition tests, pred updates, the mynode
//! retarget in the exit) execute atomically with that operation. An abort
//! signal marks the process; the next step it takes from pc 4, 5, or 6 jumps
//! to the abort path by executing line 9 directly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Config, LocId, ProcId, Value, TAIL};

/// One schedule event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Action {
    /// The process executes its next line (or its pending abort jump).
    Step(ProcId),
    /// The environment asks the process to abort its current attempt.
    AbortSignal(ProcId),
    /// A fresh process joins the protocol.
    Join(ProcId),
}

/// Who a step record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Actor {
    Proc(ProcId),
    #[serde(rename = "env")]
    Env(EnvTag),
}

/// Serialization helper so the environment actor renders as the string "env".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvTag {
    #[serde(rename = "env")]
    Env,
}

pub const ENV: Actor = Actor::Env(EnvTag::Env);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    ExecLine,
    BusyWaitRead,
    AbortSignal,
    Join,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub loc: LocId,
    pub kind: AccessKind,
}

/// Lifecycle events observable on a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    AttemptStart,
    DoorwayComplete,
    CsEnter,
    CsExit,
    AttemptEndSuccess,
    AttemptEndAbort,
    AbortSignal,
}

/// Per-step log entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub seq: u64,
    /// The stepping process, or "env" for signal delivery.
    pub actor: Actor,
    /// The process the step concerns (the actor itself, the signal target,
    /// or the joiner).
    pub proc: ProcId,
    pub kind: StepKind,
    /// Executed line for exec/busy-wait records; the abort jump records the
    /// abort line with a pre_pc in the waiting room.
    pub line: Option<u8>,
    pub pre_pc: u8,
    pub post_pc: u8,
    pub accesses: Vec<Access>,
    pub events: Vec<Event>,
}

/// Outcome of one step: the successor configuration plus its record.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub config: Config,
    pub record: StepRecord,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("action not enabled: {0}")]
    NotEnabled(String),
    /// The machine was asked to treat a non-address value as a location.
    /// Unreachable from any initial configuration; reachable under mutations.
    #[error("model soundness failure at line {line}: {detail}")]
    ModelFault { line: u8, detail: String },
}

/// Single-line semantic faults used to demonstrate that the checkers are not
/// vacuous: each one is detected by exploration as an invariant or bound
/// violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Line 10 writes nil instead of the predecessor address, destroying the
    /// aborted-node mark.
    Line10WritesNil,
    /// Line 5 skips resetting the go flag.
    Line5Skipped,
    /// Line 9 deposits a forged token instead of nil.
    Line9WritesToken,
}

/// Every action currently enabled. `Step(p)` is enabled for every joined
/// process (callers enforcing attempt budgets filter processes idling at pc 1
/// themselves); a signal is enabled only outside the remainder section and
/// only while no earlier signal is pending. Joins are validated by `step`
/// directly since fresh ids are unbounded.
pub fn enabled_actions(config: &Config, allow_aborts: bool) -> Vec<Action> {
    let mut actions: Vec<Action> = config.procs.keys().map(|&p| Action::Step(p)).collect();
    if allow_aborts {
        actions.extend(
            config
                .procs
                .iter()
                .filter(|(_, st)| st.pc != 1 && !st.abort_pending)
                .map(|(&p, _)| Action::AbortSignal(p)),
        );
    }
    actions
}

/// Applies one action to a configuration.
pub fn step(config: &Config, action: Action) -> Result<StepResult, StepError> {
    step_mutated(config, action, None)
}

/// Like `step`, with an optional injected fault.
pub fn step_mutated(
    config: &Config,
    action: Action,
    mutation: Option<Mutation>,
) -> Result<StepResult, StepError> {
    match action {
        Action::Join(p) => {
            let mut next = config.clone();
            next.join(p)
                .map_err(|e| StepError::NotEnabled(e.to_string()))?;
            let record = StepRecord {
                seq: 0,
                actor: Actor::Proc(p),
                proc: p,
                kind: StepKind::Join,
                line: None,
                pre_pc: 1,
                post_pc: 1,
                accesses: vec![],
                events: vec![],
            };
            Ok(StepResult { config: next, record })
        }
        Action::AbortSignal(p) => {
            let st = config
                .procs
                .get(&p)
                .ok_or_else(|| StepError::NotEnabled(format!("{p} not joined")))?;
            if st.pc == 1 {
                return Err(StepError::NotEnabled(format!("{p} is in the remainder section")));
            }
            if st.abort_pending {
                return Err(StepError::NotEnabled(format!("{p} already has a pending signal")));
            }
            let mut next = config.clone();
            next.procs.get_mut(&p).unwrap().abort_pending = true;
            let record = StepRecord {
                seq: 0,
                actor: ENV,
                proc: p,
                kind: StepKind::AbortSignal,
                line: None,
                pre_pc: st.pc,
                post_pc: st.pc,
                accesses: vec![],
                events: vec![Event::AbortSignal],
            };
            Ok(StepResult { config: next, record })
        }
        Action::Step(p) => {
            if !config.is_joined(p) {
                return Err(StepError::NotEnabled(format!("{p} not joined")));
            }
            exec_line(config, p, mutation)
        }
    }
}

/// A swap on `loc`: returns the old value after storing the new one.
fn swap(config: &mut Config, loc: LocId, new: Value) -> Value {
    config.words.insert(loc, new).expect("swap on unallocated location")
}

/// Executes the next line of `p`, honoring the abort jump.
fn exec_line(
    config: &Config,
    p: ProcId,
    mutation: Option<Mutation>,
) -> Result<StepResult, StepError> {
    let pre = config.procs[&p];
    // A pending signal takes effect only after lines 3-6; from the waiting
    // room the next step executes the first abort line.
    let line = if pre.abort_pending && matches!(pre.pc, 4..=6) { 9 } else { pre.pc };

    let mut next = config.clone();
    let mut events = vec![];
    let mut accesses = vec![];
    let mut kind = StepKind::ExecLine;

    match line {
        1 => {
            let old = swap(&mut next, pre.mynode, Value::Nil);
            accesses.push(Access { loc: pre.mynode, kind: AccessKind::Swap });
            events.push(Event::AttemptStart);
            *next.attempts_started.get_mut(&p).unwrap() += 1;
            let st = next.procs.get_mut(&p).unwrap();
            if old == Value::NodeRef(pre.pred) {
                // The aborted spot is still in the queue: reclaimed, and the
                // doorway is already complete.
                st.pc = 3;
                events.push(Event::DoorwayComplete);
            } else {
                st.pc = 2;
            }
        }
        2 => {
            let old = swap(&mut next, TAIL, Value::NodeRef(pre.mynode));
            accesses.push(Access { loc: TAIL, kind: AccessKind::Swap });
            let tail = match old {
                Value::NodeRef(l) => l,
                v => {
                    return Err(StepError::ModelFault {
                        line: 2,
                        detail: format!("tail word held {v}"),
                    })
                }
            };
            let st = next.procs.get_mut(&p).unwrap();
            st.pred = tail;
            st.pc = 3;
            events.push(Event::DoorwayComplete);
        }
        3 | 6 => {
            let old = swap(&mut next, pre.pred, Value::GoRef(p));
            accesses.push(Access { loc: pre.pred, kind: AccessKind::Swap });
            resolve_try_swap(&mut next, p, line, old, &mut events)?;
        }
        4 => {
            let go = next.go_loc(p);
            accesses.push(Access { loc: go, kind: AccessKind::Read });
            let flag = match next.words[&go] {
                Value::Bool(b) => b,
                v => {
                    return Err(StepError::ModelFault {
                        line: 4,
                        detail: format!("go word held {v}"),
                    })
                }
            };
            if flag {
                next.procs.get_mut(&p).unwrap().pc = 5;
            } else {
                kind = StepKind::BusyWaitRead;
            }
        }
        5 => {
            if mutation != Some(Mutation::Line5Skipped) {
                let go = next.go_loc(p);
                next.words.insert(go, Value::Bool(false));
                accesses.push(Access { loc: go, kind: AccessKind::Write });
            }
            next.procs.get_mut(&p).unwrap().pc = 6;
        }
        7 => {
            let old = swap(&mut next, pre.mynode, Value::Token);
            accesses.push(Access { loc: pre.mynode, kind: AccessKind::Swap });
            let st = next.procs.get_mut(&p).unwrap();
            // The retarget to the predecessor node completes atomically with
            // the swap; the released node becomes the new unowned token node.
            st.mynode = pre.pred;
            st.temp = old;
            if pre.in_cs {
                events.push(Event::CsExit);
                st.in_cs = false;
            }
            if old != Value::Nil {
                st.pc = 8;
            } else {
                st.pc = 1;
                st.abort_pending = false;
                events.push(Event::AttemptEndSuccess);
            }
        }
        8 => {
            wake(&mut next, p, 8, &mut accesses)?;
            let st = next.procs.get_mut(&p).unwrap();
            st.pc = 1;
            st.abort_pending = false;
            events.push(Event::AttemptEndSuccess);
        }
        9 => {
            let deposit = if mutation == Some(Mutation::Line9WritesToken) {
                Value::Token
            } else {
                Value::Nil
            };
            let old = swap(&mut next, pre.pred, deposit);
            accesses.push(Access { loc: pre.pred, kind: AccessKind::Swap });
            let st = next.procs.get_mut(&p).unwrap();
            st.temp = old;
            if old == Value::Token {
                // The token arrived while aborting: sidestep the CS and leave
                // through the exit section. in_cs stays false.
                st.pc = 7;
            } else {
                if old != Value::Nil && old != Value::GoRef(p) {
                    let target = next.ref_target(old).ok_or_else(|| StepError::ModelFault {
                        line: 9,
                        detail: format!("predecessor word held {old}"),
                    })?;
                    next.procs.get_mut(&p).unwrap().pred = target;
                }
                next.procs.get_mut(&p).unwrap().pc = 10;
            }
        }
        10 => {
            let deposit = if mutation == Some(Mutation::Line10WritesNil) {
                Value::Nil
            } else {
                Value::NodeRef(pre.pred)
            };
            let old = swap(&mut next, pre.mynode, deposit);
            accesses.push(Access { loc: pre.mynode, kind: AccessKind::Swap });
            let st = next.procs.get_mut(&p).unwrap();
            st.temp = old;
            if old != Value::Nil {
                st.pc = 11;
            } else {
                st.pc = 1;
                st.abort_pending = false;
                events.push(Event::AttemptEndAbort);
            }
        }
        11 => {
            wake(&mut next, p, 11, &mut accesses)?;
            let st = next.procs.get_mut(&p).unwrap();
            st.pc = 1;
            st.abort_pending = false;
            events.push(Event::AttemptEndAbort);
        }
        other => unreachable!("pc out of range: {other}"),
    }

    let record = StepRecord {
        seq: 0,
        actor: Actor::Proc(p),
        proc: p,
        kind,
        line: Some(line),
        pre_pc: pre.pc,
        post_pc: next.procs[&p].pc,
        accesses,
        events,
    };
    Ok(StepResult { config: next, record })
}

/// Shared resolution of the try-loop swap at lines 3 and 6.
fn resolve_try_swap(
    next: &mut Config,
    p: ProcId,
    line: u8,
    old: Value,
    events: &mut Vec<Event>,
) -> Result<(), StepError> {
    if old == Value::Token {
        let st = next.procs.get_mut(&p).unwrap();
        st.temp = old;
        st.pc = 7;
        st.in_cs = true;
        // A signal that lands the process in the CS is discarded.
        st.abort_pending = false;
        events.push(Event::CsEnter);
        return Ok(());
    }
    if old != Value::Nil && old != Value::GoRef(p) {
        // The predecessor aborted: its node held its own predecessor, so
        // splice it out and inspect the new predecessor next.
        let target = next.ref_target(old).ok_or_else(|| StepError::ModelFault {
            line,
            detail: format!("predecessor word held {old}"),
        })?;
        let st = next.procs.get_mut(&p).unwrap();
        st.temp = old;
        st.pred = target;
        st.pc = 6;
    } else {
        let st = next.procs.get_mut(&p).unwrap();
        st.temp = old;
        st.pc = 4;
    }
    Ok(())
}

/// Lines 8 and 11: write true into the go word temp refers to.
fn wake(next: &mut Config, p: ProcId, line: u8, accesses: &mut Vec<Access>) -> Result<(), StepError> {
    let temp = next.procs[&p].temp;
    let target = next.ref_target(temp).ok_or_else(|| StepError::ModelFault {
        line,
        detail: format!("temp held {temp}, not a go address"),
    })?;
    next.words.insert(target, Value::Bool(true));
    accesses.push(Access { loc: target, kind: AccessKind::Write });
    Ok(())
}
