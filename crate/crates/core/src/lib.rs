//! An executable laboratory for an abortable queue lock with constant
//! amortized remote-memory-reference cost.
//!
//! The crate contains a line-accurate operational model of the lock
//! ([`semantics`]), RMR cost accounting under the cache-coherent and
//! distributed-shared-memory models together with the two potential
//! functions ([`cost`]), machine checks for the structural invariant, the
//! distance-descent argument, the per-line amortized bounds, and whole-trace
//! properties ([`verify`]), and schedule drivers from seeded random runs up
//! to bounded exhaustive search ([`explore`]).

pub mod cost;
pub mod explore;
pub mod model;
pub mod semantics;
pub mod trace;
pub mod verify;

pub use model::{derive_queue, initial_config, Config, ProcId, QueueView, Value};
pub use semantics::{enabled_actions, step, Action, Mutation, StepRecord};
pub use verify::{analyze_trace, check_invariant, Violation};
