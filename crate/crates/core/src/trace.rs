//! The per-step trace record. One record per schedule step, serialized as a
//! single JSON object per line so long runs stream without buffering.

use serde::{Deserialize, Serialize};

use crate::model::ProcId;
use crate::semantics::{Actor, Event, StepKind, StepRecord};

/// One line of a trace file. `queue` is the derived wait queue at the
/// post-state (front first), making ordering bugs readable straight off the
/// file; it is absent only when the queue could not be derived (injected
/// faults).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLine {
    pub seq: u64,
    pub actor: Actor,
    /// The process the step concerns: the actor itself, or the target of a
    /// signal delivery.
    pub proc: ProcId,
    pub kind: StepKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub line: Option<u8>,
    pub pre_pc: u8,
    pub post_pc: u8,
    pub rmr_cc: u8,
    pub rmr_dsm: u8,
    pub phi_cc: u64,
    pub phi_dsm: u64,
    pub events: Vec<Event>,
    pub queue: Option<Vec<ProcId>>,
}

impl TraceLine {
    /// Combines a semantic step record with its cost readings and the derived
    /// post-state queue.
    pub fn assemble(
        record: StepRecord,
        rmr_cc: u8,
        rmr_dsm: u8,
        phi_cc: u64,
        phi_dsm: u64,
        queue: Option<Vec<ProcId>>,
    ) -> Self {
        TraceLine {
            seq: record.seq,
            actor: record.actor,
            proc: record.proc,
            kind: record.kind,
            line: record.line,
            pre_pc: record.pre_pc,
            post_pc: record.post_pc,
            rmr_cc,
            rmr_dsm,
            phi_cc,
            phi_dsm,
            events: record.events,
            queue,
        }
    }
}
