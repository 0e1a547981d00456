//! Omniscient safety monitor.
//!
//! The cluster calls [`Observer::begin`] before handing an event to a node
//! and [`Observer::end`] afterwards. The observer looks at the node's state
//! and outputs and records every broken invariant it sees. It never
//! influences the run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use crate::clock::{is_older_than, TimeInterval};
use crate::raft::{
    ClockMode, Command, Key, LogIndex, MechanismKind, Node, NodeId, Output, ReadOutcome, Role, Term,
};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Invariant {
    ElectionSafety,
    LeaderAppendOnly,
    LogMatching,
    LeaderCompleteness,
    StateMachineSafety,
    CommitGuard,
    LimboReadGuard,
}

impl Invariant {
    pub fn name(self) -> &'static str {
        match self {
            Invariant::ElectionSafety => "election-safety",
            Invariant::LeaderAppendOnly => "leader-append-only",
            Invariant::LogMatching => "log-matching",
            Invariant::LeaderCompleteness => "leader-completeness",
            Invariant::StateMachineSafety => "state-machine-safety",
            Invariant::CommitGuard => "commit-guard",
            Invariant::LimboReadGuard => "limbo-read-guard",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub invariant: Invariant,
    pub at: SimTime,
    pub node: NodeId,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} on node {}: {}", self.invariant.name(), self.at, self.node, self.detail)
    }
}

/// Node state captured before an event.
#[derive(Clone, Copy, Debug)]
pub struct Before {
    role: Role,
    term: Term,
    last: LogIndex,
}

#[derive(Clone, Debug)]
struct Committed {
    term: Term,
    command: Command,
    /// Term of the leader that first committed it.
    by_term: Term,
}

/// What a leader's log looked like when it was elected.
#[derive(Clone, Debug)]
struct Election {
    node: NodeId,
    prior_latest: Option<TimeInterval>,
    prior_created: Option<SimTime>,
    skip_guard: bool,
    limbo_keys: BTreeSet<Key>,
    lease: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Observer {
    leaders: BTreeMap<Term, NodeId>,
    elections: BTreeMap<Term, Election>,
    committed: BTreeMap<LogIndex, Committed>,
    /// Interned log prefixes: (parent chain, term, command) -> chain id.
    chains: BTreeMap<(u64, Term, Command), u64>,
    /// Chain id seen at each (index, term).
    at_index: BTreeMap<(LogIndex, Term), u64>,
    node_chains: Vec<Vec<u64>>,
    checked_commit: Vec<LogIndex>,
    violations: Vec<Violation>,
}

impl Observer {
    pub fn new(n: usize) -> Self {
        Observer {
            node_chains: alloc::vec![Vec::new(); n],
            checked_commit: alloc::vec![0; n],
            ..Observer::default()
        }
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<Violation> {
        self.violations
    }

    fn report(&mut self, invariant: Invariant, at: SimTime, node: NodeId, detail: String) {
        self.violations.push(Violation { invariant, at, node, detail });
    }

    pub fn begin(&self, node: &Node) -> Before {
        Before { role: node.role(), term: node.term(), last: node.last_index() }
    }

    pub fn end(&mut self, now: SimTime, before: Before, node: &mut Node, outputs: &[Output]) {
        let id = node.id();
        let dirty = node.take_log_dirty();
        if let Some(from) = dirty {
            if before.role == Role::Leader && node.term() == before.term && node.is_leader() && from <= before.last {
                self.report(
                    Invariant::LeaderAppendOnly,
                    now,
                    id,
                    format!("leader of term {} rewrote index {from} (last was {})", before.term, before.last),
                );
            }
            self.track_log(now, node, from);
        }
        if node.commit_index() < self.checked_commit[id] {
            self.checked_commit[id] = node.commit_index();
        }
        for o in outputs {
            match o {
                Output::BecameLeader { term } => self.on_elected(now, node, *term),
                Output::Committed { from, to, reading } => self.on_leader_commit(now, node, *from, *to, *reading),
                Output::ReadDone { key, outcome: ReadOutcome::Values(_), .. } => self.on_read_served(now, node, *key),
                _ => {}
            }
        }
        self.check_commits(now, node);
    }

    fn track_log(&mut self, now: SimTime, node: &Node, from: LogIndex) {
        let id = node.id();
        let keep = (from.max(1) - 1) as usize;
        let chains = &mut self.node_chains[id];
        chains.truncate(keep.min(chains.len()));
        let mut parent = chains.last().copied().unwrap_or(0);
        let start = chains.len();
        let mut conflicts = Vec::new();
        for e in node.log().get(start..).unwrap_or(&[]) {
            let next = self.chains.len() as u64 + 1;
            let chain = *self.chains.entry((parent, e.term, e.command)).or_insert(next);
            match self.at_index.get(&(e.index, e.term)) {
                Some(&seen) if seen != chain => conflicts.push(e.index),
                Some(_) => {}
                None => {
                    self.at_index.insert((e.index, e.term), chain);
                }
            }
            self.node_chains[id].push(chain);
            parent = chain;
        }
        for index in conflicts {
            self.report(
                Invariant::LogMatching,
                now,
                id,
                format!("entry {index} matches another log's term but not its prefix"),
            );
        }
    }

    fn on_elected(&mut self, now: SimTime, node: &Node, term: Term) {
        let id = node.id();
        if let Some(&other) = self.leaders.get(&term) {
            if other != id {
                self.report(Invariant::ElectionSafety, now, id, format!("second leader for term {term} (first was {other})"));
            }
        }
        self.leaders.insert(term, id);
        let missing: Vec<LogIndex> = self
            .committed
            .iter()
            .filter(|(i, c)| {
                c.by_term < term && node.entry(**i).is_none_or(|e| e.term != c.term || e.command != c.command)
            })
            .map(|(i, _)| *i)
            .collect();
        for index in missing {
            self.report(
                Invariant::LeaderCompleteness,
                now,
                id,
                format!("leader of term {term} lacks committed entry {index}"),
            );
        }
        // The leader appends its own entries after this output; only prior
        // terms describe the inherited state.
        let prior: Vec<_> = node.log().iter().filter(|e| e.term < term).collect();
        let last = prior.last().map(|e| e.index).unwrap_or(0);
        let skip_guard =
            last == 0 || (last <= node.commit_index() && prior.last().is_some_and(|e| e.command == Command::EndLease));
        let limbo_keys =
            prior.iter().filter(|e| e.index > node.commit_index()).filter_map(|e| e.command.key()).collect();
        self.elections.insert(
            term,
            Election {
                node: id,
                prior_latest: prior.iter().map(|e| e.write_time).max_by_key(|w| w.latest),
                prior_created: prior.iter().map(|e| e.created_at).max(),
                skip_guard,
                limbo_keys,
                lease: false,
            },
        );
    }

    fn on_leader_commit(
        &mut self,
        now: SimTime,
        node: &Node,
        from: LogIndex,
        to: LogIndex,
        reading: Option<TimeInterval>,
    ) {
        let id = node.id();
        let term = node.term();
        let cfg = node.config().clone();
        if cfg.kind == MechanismKind::LeaseGuard {
            if let Some(el) = self.elections.get(&term).filter(|e| e.node == id && !e.lease).cloned() {
                if !el.skip_guard {
                    self.check_guard(now, id, &el, reading, cfg.delta, cfg.clock_mode);
                }
                if let Some(e) = self.elections.get_mut(&term) {
                    e.lease = true;
                }
            }
        }
        for index in from + 1..=to {
            let Some(e) = node.entry(index) else { continue };
            match self.committed.get(&index) {
                Some(c) if c.term != e.term || c.command != e.command => {
                    self.report(
                        Invariant::StateMachineSafety,
                        now,
                        id,
                        format!("index {index} committed twice with different entries"),
                    );
                }
                Some(_) => {}
                None => {
                    self.committed.insert(index, Committed { term: e.term, command: e.command, by_term: term });
                }
            }
        }
    }

    fn check_guard(
        &mut self,
        now: SimTime,
        id: NodeId,
        el: &Election,
        reading: Option<TimeInterval>,
        delta: Duration,
        mode: ClockMode,
    ) {
        if mode == ClockMode::Interval {
            match (el.prior_latest, reading) {
                (Some(prior), Some(r)) if !is_older_than(prior, delta, r) => self.report(
                    Invariant::CommitGuard,
                    now,
                    id,
                    format!("first commit with prior entry {prior} not older than the lease at {r}"),
                ),
                (Some(_), None) => {
                    self.report(Invariant::CommitGuard, now, id, String::from("first commit without a clock reading"))
                }
                _ => {}
            }
        }
        // Whatever the mode, the inherited lease must really have run out.
        if let Some(created) = el.prior_created {
            if created + delta > now {
                self.report(
                    Invariant::CommitGuard,
                    now,
                    id,
                    format!("first commit only {} after a prior entry was written", crate::time::DisplayDuration(now - created)),
                );
            }
        }
    }

    fn on_read_served(&mut self, now: SimTime, node: &Node, key: Key) {
        let cfg = node.config();
        if cfg.kind != MechanismKind::LeaseGuard || node.has_own_term_commit() {
            return;
        }
        let id = node.id();
        if cfg.clock_mode == ClockMode::DriftTimer {
            self.report(Invariant::LimboReadGuard, now, id, String::from("read served before any own-term commit"));
            return;
        }
        let term = node.term();
        let blocked = self.elections.get(&term).is_some_and(|e| e.node == id && e.limbo_keys.contains(&key));
        if blocked {
            self.report(Invariant::LimboReadGuard, now, id, format!("read of key {key} written in the limbo region"));
        }
    }

    fn check_commits(&mut self, now: SimTime, node: &Node) {
        let id = node.id();
        let commit = node.commit_index();
        let start = self.checked_commit[id];
        if commit <= start {
            return;
        }
        let mut bad = Vec::new();
        for index in start + 1..=commit {
            let (Some(e), Some(c)) = (node.entry(index), self.committed.get(&index)) else { continue };
            if e.term != c.term || e.command != c.command {
                bad.push(index);
            }
        }
        self.checked_commit[id] = commit;
        for index in bad {
            self.report(
                Invariant::StateMachineSafety,
                now,
                id,
                format!("index {index} applied with a different entry than elsewhere"),
            );
        }
    }
}
