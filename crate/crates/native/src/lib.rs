//! A thread-safe abortable queue lock built on hardware atomic exchange.
//!
//! The lock keeps one word per registered thread for its queue node, one for
//! its busy-wait flag, plus the shared sentinel node and the tail word. Every
//! shared access of the algorithm is a sequentially consistent atomic
//! operation, matching the interleaved-step model the correctness argument
//! assumes. An external party may raise a thread's abort flag at any time;
//! the owner observes it between shared operations of the try section and
//! finishes its abort within a constant number of shared operations.

mod stress;

pub use stress::{stress, StressError, StressReport};

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering::SeqCst};
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;

/// Reserved word encodings. Addresses of words are at least 8-aligned, so
/// neither value can collide with a real address.
const NIL: usize = 0;
const TOKEN: usize = 1;
const FALSE_WORD: usize = 0;
const TRUE_WORD: usize = 1;

/// One shared word, padded to a cache line to keep the busy-wait local.
#[repr(align(64))]
struct Word(AtomicUsize);

impl Word {
    fn new(v: usize) -> Box<Word> {
        Box::new(Word(AtomicUsize::new(v)))
    }
}

// Boxing keeps each word's address stable across Vec growth; handles hold
// raw pointers to the words.
#[allow(clippy::vec_box)]
struct Registry {
    nodes: Vec<Box<Word>>,
    gos: Vec<Box<Word>>,
    threads: HashSet<ThreadId>,
}

/// The lock itself: the tail word, the sentinel node, and the allocation
/// registry. Nodes are never freed while the lock lives; their ownership is
/// permuted among threads by releases.
pub struct Lock {
    tail: Word,
    /// Kept alive for the lock's lifetime; its address is the initial tail.
    _sentinel: Box<Word>,
    registry: Mutex<Registry>,
}

impl Default for Lock {
    fn default() -> Self {
        Self::new()
    }
}

/// Word counts of everything the lock has allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryAudit {
    pub registered_threads: usize,
    /// Per-thread nodes plus the sentinel.
    pub node_words: usize,
    pub go_words: usize,
    pub tail_words: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsageError {
    AlreadyRegistered,
    AlreadyHolding,
    NotHolding,
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UsageError::AlreadyRegistered => write!(f, "thread already registered"),
            UsageError::AlreadyHolding => write!(f, "acquire while holding the lock"),
            UsageError::NotHolding => write!(f, "release without holding the lock"),
        }
    }
}

impl std::error::Error for UsageError {}

/// Outcome of an acquisition attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquire {
    Acquired,
    /// The attempt was abandoned after the abort flag was observed. If the
    /// token arrived while aborting it was passed on to the successor.
    Aborted,
}

/// A cloneable token for raising a thread's abort flag from anywhere. The
/// lock consults the flag only inside `acquire`; a flag raised after the
/// acquisition succeeded stays set for the owner to observe and clear.
#[derive(Clone)]
pub struct AbortFlag(Arc<AtomicBool>);

impl AbortFlag {
    pub fn raise(&self) {
        self.0.store(true, SeqCst);
    }

    pub fn clear(&self) {
        self.0.store(false, SeqCst);
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(SeqCst)
    }
}

impl Lock {
    pub fn new() -> Lock {
        let sentinel = Word::new(TOKEN);
        let tail = Word(AtomicUsize::new(sentinel.as_ref() as *const Word as usize));
        Lock {
            tail,
            _sentinel: sentinel,
            registry: Mutex::new(Registry {
                nodes: vec![],
                gos: vec![],
                threads: HashSet::new(),
            }),
        }
    }

    /// Registers the calling thread: allocates its node (nil) and go word
    /// (false). One registration per thread; handles stay on the registering
    /// thread.
    pub fn register(self: &Arc<Self>) -> Result<ThreadHandle, UsageError> {
        let mut reg = self.registry.lock().unwrap();
        if !reg.threads.insert(std::thread::current().id()) {
            return Err(UsageError::AlreadyRegistered);
        }
        let node = Word::new(NIL);
        let go = Word::new(FALSE_WORD);
        let node_ptr = node.as_ref() as *const Word;
        let go_ptr = go.as_ref() as *const Word;
        reg.nodes.push(node);
        reg.gos.push(go);
        drop(reg);
        Ok(ThreadHandle {
            lock: Arc::clone(self),
            mynode: node_ptr,
            pred: node_ptr,
            go: go_ptr,
            abort: AbortFlag(Arc::new(AtomicBool::new(false))),
            holding: false,
            shared_ops: 0,
            last_release_ops: None,
            last_abort_ops: None,
        })
    }

    pub fn memory_audit(&self) -> MemoryAudit {
        let reg = self.registry.lock().unwrap();
        MemoryAudit {
            registered_threads: reg.threads.len(),
            node_words: reg.nodes.len() + 1,
            go_words: reg.gos.len(),
            tail_words: 1,
        }
    }
}

impl fmt::Debug for ThreadHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThreadHandle")
            .field("mynode", &self.mynode)
            .field("pred", &self.pred)
            .field("holding", &self.holding)
            .field("shared_ops", &self.shared_ops)
            .finish()
    }
}

/// Per-thread participation state. Holds raw pointers into the lock's
/// registry, which outlives the handle through the `Arc`; the handle is not
/// `Send`, so it stays confined to the thread that registered.
pub struct ThreadHandle {
    lock: Arc<Lock>,
    mynode: *const Word,
    pred: *const Word,
    go: *const Word,
    abort: AbortFlag,
    holding: bool,
    shared_ops: u64,
    last_release_ops: Option<u32>,
    last_abort_ops: Option<u32>,
}

impl ThreadHandle {
    /// The externally settable abort flag for this thread.
    pub fn abort_flag(&self) -> AbortFlag {
        self.abort.clone()
    }

    /// Total shared-memory operations performed through this handle.
    pub fn shared_ops(&self) -> u64 {
        self.shared_ops
    }

    /// Shared operations of the most recent release.
    pub fn last_release_ops(&self) -> Option<u32> {
        self.last_release_ops
    }

    /// Shared operations from observing the abort flag to returning.
    pub fn last_abort_ops(&self) -> Option<u32> {
        self.last_abort_ops
    }

    fn fas(&mut self, word: *const Word, value: usize) -> usize {
        self.shared_ops += 1;
        unsafe { (*word).0.swap(value, SeqCst) }
    }

    fn write(&mut self, word: *const Word, value: usize) {
        self.shared_ops += 1;
        unsafe { (*word).0.store(value, SeqCst) };
    }

    fn read(&mut self, word: *const Word) -> usize {
        self.shared_ops += 1;
        unsafe { (*word).0.load(SeqCst) }
    }

    fn abort_requested(&self) -> bool {
        // The flag is the environment's signal channel, not part of the
        // algorithm's shared memory; it does not count as a shared operation.
        self.abort.is_raised()
    }

    /// Runs the try section. Returns `Acquired` once the token is found, or
    /// `Aborted` if the abort flag was observed at one of the permitted
    /// points (after lines 3, 4, 5, or 6).
    pub fn acquire(&mut self) -> Result<Acquire, UsageError> {
        if self.holding {
            return Err(UsageError::AlreadyHolding);
        }
        let go_addr = self.go as usize;

        // Line 1: reclaim the old queue spot if the abort mark survived.
        let old = self.fas(self.mynode, NIL);
        if old != self.pred as usize {
            // Line 2: append afresh and learn the predecessor.
            let tail = &self.lock.tail as *const Word;
            self.pred = self.fas(tail, self.mynode as usize) as *const Word;
        }

        // Line 3.
        let mut temp = self.fas(self.pred, go_addr);
        loop {
            if temp == TOKEN {
                self.holding = true;
                return Ok(Acquire::Acquired);
            }
            if temp != NIL && temp != go_addr {
                // The predecessor aborted; splice its node out.
                self.pred = temp as *const Word;
            } else {
                // Line 4: busy-wait, polling the abort flag before each read.
                let mut spins: u32 = 0;
                loop {
                    if self.abort_requested() {
                        return Ok(self.abort_path());
                    }
                    if self.read(self.go) == TRUE_WORD {
                        break;
                    }
                    backoff(&mut spins);
                }
                // Jumping from here leaves the flag raised, as the model does.
                if self.abort_requested() {
                    return Ok(self.abort_path());
                }
                // Line 5.
                self.write(self.go, FALSE_WORD);
            }
            if self.abort_requested() {
                return Ok(self.abort_path());
            }
            // Line 6.
            temp = self.fas(self.pred, go_addr);
        }
    }

    /// Exit section, lines 7 and 8: at most two shared operations.
    pub fn release(&mut self) -> Result<(), UsageError> {
        if !self.holding {
            return Err(UsageError::NotHolding);
        }
        let before = self.shared_ops;
        self.exit_section();
        self.holding = false;
        self.last_release_ops = Some((self.shared_ops - before) as u32);
        Ok(())
    }

    fn exit_section(&mut self) {
        // Line 7: deposit the token; the released node becomes the new
        // unowned token node and the predecessor node becomes ours.
        let temp = self.fas(self.mynode, TOKEN);
        self.mynode = self.pred;
        if temp != NIL {
            // Line 8: wake the successor.
            self.write(temp as *const Word, TRUE_WORD);
        }
    }

    /// Abort section, lines 9-11. If line 9 returns the token, the attempt
    /// leaves through the exit section instead, passing the token on.
    fn abort_path(&mut self) -> Acquire {
        let before = self.shared_ops;
        let go_addr = self.go as usize;
        // Line 9: withdraw the go deposit from the predecessor node.
        let temp = self.fas(self.pred, NIL);
        if temp == TOKEN {
            self.exit_section();
            self.last_abort_ops = Some((self.shared_ops - before) as u32);
            return Acquire::Aborted;
        }
        if temp != NIL && temp != go_addr {
            self.pred = temp as *const Word;
        }
        // Line 10: mark the node aborted by storing the predecessor address.
        let temp = self.fas(self.mynode, self.pred as usize);
        if temp != NIL {
            // Line 11: tell the successor we left.
            self.write(temp as *const Word, TRUE_WORD);
        }
        self.last_abort_ops = Some((self.shared_ops - before) as u32);
        Acquire::Aborted
    }
}

fn backoff(spins: &mut u32) {
    *spins = spins.saturating_add(1);
    if *spins < 64 {
        std::hint::spin_loop();
    } else {
        std::thread::yield_now();
    }
}
