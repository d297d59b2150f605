//! Stress harness: many threads hammer one lock while abort flags are raised
//! at a configurable rate. Mutual exclusion is witnessed by a counter that is
//! incremented non-atomically inside the critical section: the final value
//! equals the number of CS entries only if the lock actually excluded.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU32, Ordering::SeqCst};
use std::sync::mpsc;
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::{AbortFlag, Acquire, Lock, MemoryAudit};

/// Result of one stress run.
#[derive(Debug, Clone, Serialize)]
pub struct StressReport {
    pub threads: u32,
    pub iterations: u64,
    pub cs_entries: u64,
    pub aborts_completed: u64,
    /// Value of the plain counter incremented inside the CS; equality with
    /// `cs_entries` proves exclusion.
    pub counter_value: u64,
    pub wall_time_ms: u64,
    pub memory: MemoryAuditReport,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MemoryAuditReport {
    pub registered_threads: usize,
    pub node_words: usize,
    pub go_words: usize,
    pub tail_words: usize,
}

impl From<MemoryAudit> for MemoryAuditReport {
    fn from(a: MemoryAudit) -> Self {
        MemoryAuditReport {
            registered_threads: a.registered_threads,
            node_words: a.node_words,
            go_words: a.go_words,
            tail_words: a.tail_words,
        }
    }
}

impl StressReport {
    /// The mutual-exclusion witness.
    pub fn counter_matches(&self) -> bool {
        self.counter_value == self.cs_entries
    }
}

#[derive(Debug, Error)]
pub enum StressError {
    #[error("deadlock suspected: {finished} of {threads} threads finished within {timeout:?}")]
    Deadlock { finished: u32, threads: u32, timeout: Duration },
    #[error("worker thread panicked")]
    WorkerPanic,
}

/// The plain, lock-protected counter. Incrementing it without the lock's
/// exclusion would be a data race; the stress run exists to show there is
/// none.
struct CsCounter(UnsafeCell<u64>);

unsafe impl Sync for CsCounter {}

const WATCHDOG: Duration = Duration::from_secs(120);

/// Runs `threads` workers for `iterations` acquire/release cycles each.
/// Per iteration a worker raises the abort flag of a uniformly random worker
/// with probability `abort_probability`, so flags land on idle, waiting, and
/// holding threads alike. The injection pattern is reproducible from `seed`.
pub fn stress(
    threads: u32,
    iterations: u64,
    abort_probability: f64,
    seed: u64,
) -> Result<StressReport, StressError> {
    assert!(threads >= 1, "at least one thread");
    assert!((0.0..=1.0).contains(&abort_probability));

    let start = Instant::now();
    let lock = Arc::new(Lock::new());
    let counter = Arc::new(CsCounter(UnsafeCell::new(0)));
    let flags: Arc<Mutex<Vec<AbortFlag>>> = Arc::new(Mutex::new(Vec::new()));
    let ready = Arc::new(Barrier::new(threads as usize));
    let finished = Arc::new(AtomicU32::new(0));
    let (tx, rx) = mpsc::channel::<(u64, u64)>();

    let mut workers = Vec::new();
    for t in 0..threads {
        let lock = Arc::clone(&lock);
        let counter = Arc::clone(&counter);
        let flags = Arc::clone(&flags);
        let ready = Arc::clone(&ready);
        let finished = Arc::clone(&finished);
        let tx = tx.clone();
        workers.push(std::thread::spawn(move || {
            let mut handle = lock.register().expect("one registration per thread");
            flags.lock().unwrap().push(handle.abort_flag());
            ready.wait();
            let flags: Vec<AbortFlag> = flags.lock().unwrap().clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(t) << 32));
            let my_flag = handle.abort_flag();
            let mut cs_entries = 0u64;
            let mut aborts = 0u64;
            for _ in 0..iterations {
                if abort_probability > 0.0 && rng.random_bool(abort_probability) {
                    flags[rng.random_range(0..flags.len())].raise();
                }
                match handle.acquire().expect("no reentrant acquire in this loop") {
                    Acquire::Acquired => {
                        // The protected increment: torn updates here mean
                        // mutual exclusion failed.
                        unsafe { *counter.0.get() += 1 };
                        cs_entries += 1;
                        // Hold the lock across a reschedule so queues build
                        // up and the waiting and abort paths actually run,
                        // even on a single hardware thread.
                        std::thread::yield_now();
                        handle.release().expect("held");
                    }
                    Acquire::Aborted => aborts += 1,
                }
                my_flag.clear();
            }
            finished.fetch_add(1, SeqCst);
            tx.send((cs_entries, aborts)).ok();
        }));
    }
    drop(tx);

    let mut cs_entries = 0u64;
    let mut aborts = 0u64;
    let deadline = Instant::now() + WATCHDOG;
    for _ in 0..threads {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(remaining) {
            Ok((c, a)) => {
                cs_entries += c;
                aborts += a;
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(StressError::Deadlock {
                    finished: finished.load(SeqCst),
                    threads,
                    timeout: WATCHDOG,
                });
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(StressError::WorkerPanic);
            }
        }
    }
    for w in workers {
        w.join().map_err(|_| StressError::WorkerPanic)?;
    }

    let counter_value = unsafe { *counter.0.get() };
    Ok(StressReport {
        threads,
        iterations,
        cs_entries,
        aborts_completed: aborts,
        counter_value,
        wall_time_ms: start.elapsed().as_millis() as u64,
        memory: lock.memory_audit().into(),
    })
}
