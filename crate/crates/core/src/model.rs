//! Domain vocabulary shared by the interpreter, cost models, and checkers:
//! shared-memory values, per-process state, whole-system configurations, and
//! the derivation of the abstract wait queue from a configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a participating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcId(pub u32);

impl fmt::Display for ProcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Identifier of one word of shared memory. Locations are symbolic: the
/// semantics only ever compares them for equality, which is exactly the set
/// of comparisons the algorithm performs on addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocId(pub u32);

impl fmt::Display for LocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "loc{}", self.0)
    }
}

/// The sentinel node that initially holds the token.
pub const SENTINEL: LocId = LocId(0);
/// The word holding the address of the current queue tail.
pub const TAIL: LocId = LocId(1);

/// What role a shared word plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocKind {
    /// A queue node: holds `Nil`, `Token`, a go reference, or a node reference.
    Node,
    /// A per-process busy-wait flag: holds `Bool` values.
    Go,
    /// The tail pointer: holds a node reference.
    Tail,
}

/// Static facts about a location: its kind and its DSM partition home.
/// The home never changes, even though node ownership is permuted by exits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocInfo {
    pub kind: LocKind,
    pub home: Option<ProcId>,
}

/// Content of one shared word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Value {
    Nil,
    Token,
    /// Boolean payload of a go word.
    Bool(bool),
    /// Address of a process's go word.
    GoRef(ProcId),
    /// Address of a node.
    NodeRef(LocId),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nil => write!(f, "nil"),
            Value::Token => write!(f, "token"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::GoRef(p) => write!(f, "&go({p})"),
            Value::NodeRef(l) => write!(f, "&{l}"),
        }
    }
}

/// Local state of one process.
///
/// `pc` ranges over 1..=11 and names the next numbered line the process will
/// execute. `pc = 9` is never stored: an abort jump executes the first abort
/// line directly out of pc 4, 5, or 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcState {
    pub pc: u8,
    pub mynode: LocId,
    pub pred: LocId,
    pub temp: Value,
    pub abort_pending: bool,
    /// True iff the CS was entered via the Try loop and line 7 has not yet run.
    /// A process that reaches pc 7 through the abort path sidesteps the CS and
    /// keeps this false.
    pub in_cs: bool,
}

/// Per-process allocation record: the node and go word the process brought
/// into the protocol when it joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcAlloc {
    pub node: LocId,
    pub go: LocId,
}

/// A complete system configuration. This is a pure value: cloning yields an
/// independent configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    /// Every allocated word, including the tail pointer.
    pub words: BTreeMap<LocId, Value>,
    /// Static location metadata.
    pub locs: BTreeMap<LocId, LocInfo>,
    pub procs: BTreeMap<ProcId, ProcState>,
    /// Which process allocated which node/go pair.
    pub allocs: BTreeMap<ProcId, ProcAlloc>,
    /// CC cache contents per process. Only go words are ever read, so in
    /// practice a process caches at most its own go word.
    pub caches: BTreeMap<ProcId, BTreeSet<LocId>>,
    /// Attempts started so far, for budget bookkeeping and trace annotation.
    pub attempts_started: BTreeMap<ProcId, u32>,
    next_loc: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("duplicate process id {0}")]
    DuplicateProcess(ProcId),
    #[error("process {0} already joined")]
    AlreadyJoined(ProcId),
}

impl Config {
    /// The node currently pointed to by the tail word.
    pub fn tail(&self) -> LocId {
        match self.words[&TAIL] {
            Value::NodeRef(l) => l,
            v => unreachable!("tail word holds {v}, not a node reference"),
        }
    }

    pub fn word(&self, loc: LocId) -> Value {
        self.words[&loc]
    }

    pub fn proc(&self, p: ProcId) -> &ProcState {
        &self.procs[&p]
    }

    pub fn go_loc(&self, p: ProcId) -> LocId {
        self.allocs[&p].go
    }

    pub fn node_loc(&self, p: ProcId) -> LocId {
        self.allocs[&p].node
    }

    /// Value of p's go flag.
    pub fn go_flag(&self, p: ProcId) -> bool {
        match self.words[&self.go_loc(p)] {
            Value::Bool(b) => b,
            v => unreachable!("go word of {p} holds {v}"),
        }
    }

    pub fn is_joined(&self, p: ProcId) -> bool {
        self.procs.contains_key(&p)
    }

    /// Resolve a stored reference to the location it denotes.
    pub fn ref_target(&self, v: Value) -> Option<LocId> {
        match v {
            Value::NodeRef(l) => Some(l),
            Value::GoRef(p) => Some(self.go_loc(p)),
            _ => None,
        }
    }

    /// All node locations, in id order.
    pub fn node_locs(&self) -> impl Iterator<Item = LocId> + '_ {
        self.locs
            .iter()
            .filter(|(_, info)| info.kind == LocKind::Node)
            .map(|(l, _)| *l)
    }

    /// Adds a fresh process to the protocol: a node word holding nil and a go
    /// word holding false, both homed in the new process's DSM partition, with
    /// the go word initially resident in its cache.
    pub fn join(&mut self, p: ProcId) -> Result<(), ConfigError> {
        if self.procs.contains_key(&p) {
            return Err(ConfigError::AlreadyJoined(p));
        }
        let node = LocId(self.next_loc);
        let go = LocId(self.next_loc + 1);
        self.next_loc += 2;
        self.locs.insert(node, LocInfo { kind: LocKind::Node, home: Some(p) });
        self.locs.insert(go, LocInfo { kind: LocKind::Go, home: Some(p) });
        self.words.insert(node, Value::Nil);
        self.words.insert(go, Value::Bool(false));
        self.allocs.insert(p, ProcAlloc { node, go });
        self.caches.insert(p, BTreeSet::from([go]));
        self.attempts_started.insert(p, 0);
        self.procs.insert(
            p,
            ProcState {
                pc: 1,
                mynode: node,
                pred: node,
                temp: Value::Nil,
                abort_pending: false,
                in_cs: false,
            },
        );
        Ok(())
    }

    /// Canonical byte encoding of everything that distinguishes states during
    /// exploration: word values, per-process locals, cache contents, and
    /// attempt counters. `in_cs` is intentionally excluded: it only affects
    /// trace events, never successor states. Storing the full encoding in the
    /// visited set makes collisions impossible.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        fn push_u32(out: &mut Vec<u8>, v: u32) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fn push_value(out: &mut Vec<u8>, v: Value) {
            match v {
                Value::Nil => out.push(0),
                Value::Token => out.push(1),
                Value::Bool(false) => out.push(2),
                Value::Bool(true) => out.push(3),
                Value::GoRef(p) => {
                    out.push(4);
                    push_u32(out, p.0);
                }
                Value::NodeRef(l) => {
                    out.push(5);
                    push_u32(out, l.0);
                }
            }
        }
        let mut out = Vec::with_capacity(16 * self.words.len());
        for (l, v) in &self.words {
            push_u32(&mut out, l.0);
            push_value(&mut out, *v);
        }
        out.push(0xff);
        for (p, st) in &self.procs {
            push_u32(&mut out, p.0);
            out.push(st.pc);
            push_u32(&mut out, st.mynode.0);
            push_u32(&mut out, st.pred.0);
            push_value(&mut out, st.temp);
            out.push(st.abort_pending as u8);
            push_u32(&mut out, self.attempts_started[p]);
            let cache = &self.caches[p];
            out.push(cache.len() as u8);
            for l in cache {
                push_u32(&mut out, l.0);
            }
        }
        out
    }
}

/// Builds the initial configuration: the sentinel holds the token, the tail
/// points at the sentinel, and every listed process has joined.
pub fn initial_config(process_ids: &[ProcId]) -> Result<Config, ConfigError> {
    let mut config = Config {
        words: BTreeMap::from([(SENTINEL, Value::Token), (TAIL, Value::NodeRef(SENTINEL))]),
        locs: BTreeMap::from([
            (SENTINEL, LocInfo { kind: LocKind::Node, home: None }),
            (TAIL, LocInfo { kind: LocKind::Tail, home: None }),
        ]),
        procs: BTreeMap::new(),
        allocs: BTreeMap::new(),
        caches: BTreeMap::new(),
        attempts_started: BTreeMap::new(),
        next_loc: 2,
    };
    for &p in process_ids {
        config.join(p).map_err(|_| ConfigError::DuplicateProcess(p))?;
    }
    Ok(config)
}

/// The abstract queue of a configuration: node addresses `a0..ak` and the
/// processes `q1..qk` owning `a1..ak`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueView {
    /// `a0..ak`; `addrs[0]` is the unique node owned by no process and
    /// `addrs[k]` is the tail.
    pub addrs: Vec<LocId>,
    /// `q1..qk`, front first.
    pub procs: Vec<ProcId>,
}

impl QueueView {
    pub fn k(&self) -> usize {
        self.procs.len()
    }

    /// 1-based queue position of `p`, if queued.
    pub fn position(&self, p: ProcId) -> Option<usize> {
        self.procs.iter().position(|&q| q == p).map(|i| i + 1)
    }

    pub fn contains(&self, p: ProcId) -> bool {
        self.procs.contains(&p)
    }
}

/// Why a configuration's queue could not be derived. Each reason corresponds
/// to a violated structural clause of the invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Underivable {
    /// Zero or more than one node is no process's mynode.
    DuplicateA0 { candidates: Vec<LocId> },
    /// Chain following hit an address owned by no process or several.
    NoUniqueOwner { addr: LocId, owners: Vec<ProcId> },
    /// Chain following revisited an address.
    Cycle { addr: LocId },
    /// Chain exceeded the number of participating processes plus one.
    TooLong,
}

impl fmt::Display for Underivable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Underivable::DuplicateA0 { candidates } => {
                write!(f, "no unique unowned node (candidates: {candidates:?})")
            }
            Underivable::NoUniqueOwner { addr, owners } => {
                write!(f, "no unique owner of {addr} (owners: {owners:?})")
            }
            Underivable::Cycle { addr } => write!(f, "pred chain revisits {addr}"),
            Underivable::TooLong => write!(f, "pred chain longer than process count + 1"),
        }
    }
}

/// Derives the unique queue of a configuration, following pred pointers from
/// the tail back to the unique unowned node. Succeeds on every configuration
/// reachable from an initial one; failure reasons witness broken structure.
pub fn derive_queue(config: &Config) -> Result<QueueView, Underivable> {
    let mut mynodes: BTreeMap<LocId, Vec<ProcId>> = BTreeMap::new();
    for (&p, st) in &config.procs {
        mynodes.entry(st.mynode).or_default().push(p);
    }
    if let Some((&addr, owners)) = mynodes.iter().find(|(_, owners)| owners.len() > 1) {
        return Err(Underivable::NoUniqueOwner { addr, owners: owners.clone() });
    }
    let candidates: Vec<LocId> =
        config.node_locs().filter(|l| !mynodes.contains_key(l)).collect();
    if candidates.len() != 1 {
        return Err(Underivable::DuplicateA0 { candidates });
    }
    let a0 = candidates[0];

    let mut rev_addrs = vec![];
    let mut rev_procs = vec![];
    let mut seen = BTreeSet::new();
    let mut cur = config.tail();
    while cur != a0 {
        if !seen.insert(cur) {
            return Err(Underivable::Cycle { addr: cur });
        }
        if rev_addrs.len() > config.procs.len() {
            return Err(Underivable::TooLong);
        }
        let owners: Vec<ProcId> = config
            .procs
            .iter()
            .filter(|(_, st)| st.mynode == cur)
            .map(|(p, _)| *p)
            .collect();
        if owners.len() != 1 {
            return Err(Underivable::NoUniqueOwner { addr: cur, owners });
        }
        let q = owners[0];
        rev_addrs.push(cur);
        rev_procs.push(q);
        cur = config.procs[&q].pred;
    }
    rev_addrs.push(a0);
    rev_addrs.reverse();
    rev_procs.reverse();
    Ok(QueueView { addrs: rev_addrs, procs: rev_procs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_system_has_only_sentinel_and_tail() {
        let c = initial_config(&[]).unwrap();
        assert_eq!(c.word(SENTINEL), Value::Token);
        assert_eq!(c.tail(), SENTINEL);
        let q = derive_queue(&c).unwrap();
        assert_eq!(q.k(), 0);
        assert_eq!(q.addrs, vec![SENTINEL]);
    }

    #[test]
    fn single_process_initial_state() {
        let p1 = ProcId(1);
        let c = initial_config(&[p1]).unwrap();
        assert_eq!(c.word(c.node_loc(p1)), Value::Nil);
        assert_eq!(c.word(c.go_loc(p1)), Value::Bool(false));
        assert_eq!(c.proc(p1).pc, 1);
        assert_eq!(c.proc(p1).mynode, c.node_loc(p1));
        assert_eq!(c.proc(p1).pred, c.node_loc(p1));
        assert!(!c.proc(p1).abort_pending);
        assert_eq!(c.tail(), SENTINEL);
        // DSM homes: own node and go in own partition, sentinel and tail unowned.
        assert_eq!(c.locs[&c.node_loc(p1)].home, Some(p1));
        assert_eq!(c.locs[&c.go_loc(p1)].home, Some(p1));
        assert_eq!(c.locs[&SENTINEL].home, None);
        assert_eq!(c.locs[&TAIL].home, None);
        // CC: the go word starts out cached by its owner.
        assert!(c.caches[&p1].contains(&c.go_loc(p1)));
    }

    #[test]
    fn two_process_initial_queue_is_empty() {
        let c = initial_config(&[ProcId(1), ProcId(2)]).unwrap();
        let q = derive_queue(&c).unwrap();
        assert_eq!(q.k(), 0);
        assert_eq!(q.addrs, vec![SENTINEL]);
        assert!(q.procs.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = initial_config(&[ProcId(3), ProcId(3)]).unwrap_err();
        assert_eq!(err, ConfigError::DuplicateProcess(ProcId(3)));
    }

    #[test]
    fn equal_mynodes_are_underivable() {
        let (p1, p2) = (ProcId(1), ProcId(2));
        let mut c = initial_config(&[p1, p2]).unwrap();
        let shared = c.node_loc(p1);
        c.procs.get_mut(&p2).unwrap().mynode = shared;
        match derive_queue(&c) {
            Err(Underivable::NoUniqueOwner { addr, owners }) => {
                assert_eq!(addr, shared);
                assert_eq!(owners, vec![p1, p2]);
            }
            other => panic!("expected no-unique-owner, got {other:?}"),
        }
    }

    #[test]
    fn stray_unowned_node_is_underivable() {
        let p1 = ProcId(1);
        let mut c = initial_config(&[p1]).unwrap();
        // Aim p1's mynode at a go word: both real nodes become unowned.
        c.procs.get_mut(&p1).unwrap().mynode = c.go_loc(p1);
        match derive_queue(&c) {
            Err(Underivable::DuplicateA0 { candidates }) => {
                assert_eq!(candidates.len(), 2);
            }
            other => panic!("expected duplicate-a0, got {other:?}"),
        }
    }

    #[test]
    fn chain_through_a_foreign_word_has_no_owner() {
        let (p1, p2) = (ProcId(1), ProcId(2));
        let mut c = initial_config(&[p1, p2]).unwrap();
        // p1 heads the chain but its pred points at a go word.
        let n1 = c.node_loc(p1);
        let stray = c.go_loc(p2);
        c.words.insert(TAIL, Value::NodeRef(n1));
        c.procs.get_mut(&p1).unwrap().pred = stray;
        match derive_queue(&c) {
            Err(Underivable::NoUniqueOwner { addr, owners }) => {
                assert_eq!(addr, stray);
                assert!(owners.is_empty());
            }
            other => panic!("expected no-unique-owner, got {other:?}"),
        }
    }

    #[test]
    fn broken_pred_chain_reports_cycle() {
        let (p1, p2) = (ProcId(1), ProcId(2));
        let mut c = initial_config(&[p1, p2]).unwrap();
        // Put p1 in the chain but point its pred at itself.
        let n1 = c.node_loc(p1);
        c.words.insert(TAIL, Value::NodeRef(n1));
        c.procs.get_mut(&p1).unwrap().pred = n1;
        match derive_queue(&c) {
            Err(Underivable::Cycle { addr }) => assert_eq!(addr, n1),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn node_count_is_process_count_plus_one() {
        let ids: Vec<ProcId> = (0..5).map(ProcId).collect();
        let mut c = initial_config(&ids).unwrap();
        assert_eq!(c.node_locs().count(), 6);
        c.join(ProcId(9)).unwrap();
        assert_eq!(c.node_locs().count(), 7);
        assert_eq!(c.join(ProcId(9)), Err(ConfigError::AlreadyJoined(ProcId(9))));
    }

    #[test]
    fn canonical_bytes_ignore_in_cs_but_track_everything_else() {
        let p1 = ProcId(1);
        let c1 = initial_config(&[p1]).unwrap();
        let mut c2 = c1.clone();
        c2.procs.get_mut(&p1).unwrap().in_cs = true;
        assert_eq!(c1.canonical_bytes(), c2.canonical_bytes());
        let mut c3 = c1.clone();
        c3.procs.get_mut(&p1).unwrap().temp = Value::Token;
        assert_ne!(c1.canonical_bytes(), c3.canonical_bytes());
        let mut c4 = c1.clone();
        c4.caches.get_mut(&p1).unwrap().clear();
        assert_ne!(c1.canonical_bytes(), c4.canonical_bytes());
    }
}
