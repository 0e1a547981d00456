//! Hand-driven cluster for scripted protocol scenarios.
//!
//! Messages travel with zero latency in FIFO order, but only when the
//! script calls [`ScriptedCluster::deliver_all`]. Timers never fire on their
//! own: the script triggers elections, heartbeats, and wakeups explicitly.
//! Clocks are perfect unless configured otherwise.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use core::time::Duration;

use crate::clock::{ClockConfig, LocalClock, NodeClock};
use crate::observer::{Observer, Violation};
use crate::raft::{
    Command, Key, LogIndex, MechanismConfig, Message, Node, NodeId, NodeTiming, Output, ReadOutcome, ReqId,
    WriteOutcome,
};
use crate::rng::{stream, SeededRng};
use crate::time::SimTime;
use crate::workload::Value;

pub struct ScriptedCluster {
    nodes: Vec<Node>,
    now: SimTime,
    queue: VecDeque<(NodeId, NodeId, Message)>,
    cut: BTreeSet<(NodeId, NodeId)>,
    crashed: BTreeSet<NodeId>,
    next_req: ReqId,
    writes: BTreeMap<ReqId, WriteOutcome>,
    reads: BTreeMap<ReqId, ReadOutcome>,
    observer: Observer,
}

impl ScriptedCluster {
    pub fn new(n: usize, cfg: MechanismConfig) -> Self {
        Self::with_clocks(n, cfg, Duration::ZERO, &alloc::vec![0.0; n], Duration::ZERO)
    }

    /// `drift[i]` is node `i`'s local clock rate error.
    pub fn with_clocks(n: usize, cfg: MechanismConfig, max_error: Duration, drift: &[f64], epsilon: Duration) -> Self {
        let nodes = (0..n)
            .map(|id| {
                let timing = NodeTiming {
                    clock: NodeClock::new(
                        ClockConfig { max_error, ..ClockConfig::default() },
                        SeededRng::derive(0, stream::CLOCK | id as u64),
                    ),
                    local: LocalClock::new(drift[id]),
                    epsilon,
                    election_rng: SeededRng::derive(0, stream::ELECTION | id as u64),
                };
                Node::new(id, n, cfg.clone(), timing)
            })
            .collect();
        ScriptedCluster {
            nodes,
            now: SimTime::ZERO,
            queue: VecDeque::new(),
            cut: BTreeSet::new(),
            crashed: BTreeSet::new(),
            next_req: 0,
            writes: BTreeMap::new(),
            reads: BTreeMap::new(),
            observer: Observer::new(n),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn advance(&mut self, d: Duration) {
        self.now = self.now + d;
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn violations(&self) -> &[Violation] {
        self.observer.violations()
    }

    pub fn pending_messages(&self) -> usize {
        self.queue.len()
    }

    /// Drops all traffic between `a` and `b` until [`ScriptedCluster::heal`].
    pub fn cut(&mut self, a: NodeId, b: NodeId) {
        self.cut.insert((a, b));
        self.cut.insert((b, a));
    }

    /// Drops traffic from `from` to `to` only.
    pub fn cut_one_way(&mut self, from: NodeId, to: NodeId) {
        self.cut.insert((from, to));
    }

    pub fn isolate(&mut self, id: NodeId) {
        for p in 0..self.nodes.len() {
            if p != id {
                self.cut(id, p);
            }
        }
    }

    pub fn heal(&mut self) {
        self.cut.clear();
    }

    pub fn crash(&mut self, id: NodeId) {
        self.nodes[id].crash();
        self.crashed.insert(id);
    }

    pub fn restart(&mut self, id: NodeId) {
        self.crashed.remove(&id);
        self.step(id, |n, now, out| n.restart(now, out));
    }

    fn step(&mut self, id: NodeId, f: impl FnOnce(&mut Node, SimTime, &mut Vec<Output>)) {
        let now = self.now;
        let mut out = Vec::new();
        let before = self.observer.begin(&self.nodes[id]);
        f(&mut self.nodes[id], now, &mut out);
        self.observer.end(now, before, &mut self.nodes[id], &out);
        for o in out {
            match o {
                Output::Send { to, msg } => self.queue.push_back((id, to, msg)),
                Output::WriteDone { req, outcome } => {
                    self.writes.insert(req, outcome);
                }
                Output::ReadDone { req, outcome, .. } => {
                    self.reads.insert(req, outcome);
                }
                _ => {}
            }
        }
    }

    /// Delivers queued messages (and whatever they trigger) until none remain.
    pub fn deliver_all(&mut self) {
        while let Some((from, to, msg)) = self.queue.pop_front() {
            if self.cut.contains(&(from, to)) || self.crashed.contains(&to) {
                continue;
            }
            self.step(to, |n, now, out| n.on_message(now, from, msg, out));
        }
    }

    /// Discards queued messages without delivering them.
    pub fn drop_all(&mut self) {
        self.queue.clear();
    }

    pub fn timeout(&mut self, id: NodeId) {
        self.step(id, |n, now, out| n.on_election_timeout(now, out));
    }

    /// Fires `id`'s election timer and delivers the resulting traffic.
    pub fn elect(&mut self, id: NodeId) {
        self.timeout(id);
        self.deliver_all();
    }

    pub fn heartbeat(&mut self, id: NodeId) {
        let term = self.nodes[id].term();
        self.step(id, |n, now, out| n.on_heartbeat(now, term, out));
    }

    pub fn wakeup(&mut self, id: NodeId) {
        self.step(id, |n, now, out| n.on_wakeup(now, out));
    }

    pub fn write(&mut self, id: NodeId, key: Key, value: Value) -> ReqId {
        let req = self.next_req;
        self.next_req += 1;
        self.step(id, |n, now, out| n.client_write(now, req, key, value, out));
        req
    }

    pub fn read(&mut self, id: NodeId, key: Key) -> ReqId {
        let req = self.next_req;
        self.next_req += 1;
        self.step(id, |n, now, out| n.client_read(now, req, key, out));
        req
    }

    /// Reads and returns the outcome if it completed without messaging.
    pub fn read_now(&mut self, id: NodeId, key: Key) -> Option<ReadOutcome> {
        let req = self.read(id, key);
        self.read_outcome(req).cloned()
    }

    pub fn write_outcome(&self, req: ReqId) -> Option<WriteOutcome> {
        self.writes.get(&req).copied()
    }

    pub fn read_outcome(&self, req: ReqId) -> Option<&ReadOutcome> {
        self.reads.get(&req)
    }

    pub fn relinquish(&mut self, id: NodeId) {
        self.step(id, |n, now, out| n.relinquish(now, out));
    }

    pub fn stage(&mut self, id: NodeId, commands: &[Command]) -> Vec<LogIndex> {
        let now = self.now;
        let before = self.observer.begin(&self.nodes[id]);
        let idx = self.nodes[id].stage_entries(now, commands);
        self.observer.end(now, before, &mut self.nodes[id], &[]);
        idx
    }

    pub fn replicate_to(&mut self, id: NodeId, peer: NodeId) {
        self.step(id, |n, now, out| n.replicate_all_to(now, peer, out));
    }
}

/// Scripted runs for each case of the read-your-writes argument: a write
/// `w` is committed by one leader and a later read `r` goes to the leader
/// named by the case.
pub mod read_your_writes {
    use super::*;
    use crate::raft::Role;

    pub const KEY_W: Key = 7;
    pub const KEY_OTHER: Key = 3;
    pub const W: Value = Value { client: 1, seq: 1 };
    pub const OTHER: Value = Value { client: 2, seq: 1 };

    #[derive(Clone, Debug, PartialEq, Eq)]
    pub struct CaseResult {
        pub name: &'static str,
        /// Outcome of the designated read of `w`'s key.
        pub read: Option<ReadOutcome>,
        /// Outcome the case's argument requires.
        pub expected: ReadOutcome,
        pub violations: usize,
    }

    impl CaseResult {
        pub fn holds(&self) -> bool {
            self.read.as_ref() == Some(&self.expected) && self.violations == 0
        }
    }

    fn delta() -> Duration {
        MechanismConfig::leaseguard().delta
    }

    /// Node 0 leads term 1 and commits `OTHER` then `w`; followers learn both commits.
    fn committed_w() -> ScriptedCluster {
        let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
        c.elect(0);
        c.advance(Duration::from_millis(1));
        c.write(0, KEY_OTHER, OTHER);
        c.deliver_all();
        c.write(0, KEY_W, W);
        c.deliver_all();
        c.heartbeat(0);
        c.deliver_all();
        c
    }

    /// Read sent to the leader that committed `w`, in the same term.
    pub fn same_leader() -> CaseResult {
        let mut c = committed_w();
        c.advance(Duration::from_millis(10));
        let read = c.read_now(0, KEY_W);
        CaseResult { name: "same leader", read, expected: ReadOutcome::Values(alloc::vec![W]), violations: c.violations().len() }
    }

    /// Read sent to a deposed leader after the newer leader committed `w`.
    pub fn deposed_leader() -> CaseResult {
        let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
        c.elect(0);
        c.advance(Duration::from_millis(1));
        c.write(0, KEY_OTHER, OTHER);
        c.deliver_all();
        c.heartbeat(0);
        c.deliver_all();
        // Node 0 is cut off but still believes it leads term 1.
        c.isolate(0);
        c.advance(Duration::from_millis(100));
        c.elect(1);
        c.write(1, KEY_W, W);
        c.deliver_all();
        // The guard holds w back until node 0's entries are older than the lease.
        let held = c.node(1).commit_index() < c.node(1).last_index();
        c.advance(delta());
        c.wakeup(1);
        c.deliver_all();
        let committed = c.node(1).kv().get(&KEY_W) == Some(&alloc::vec![W]);
        let read = c.read_now(0, KEY_W);
        let ok_setup = held && committed && c.node(0).role() == Role::Leader;
        CaseResult {
            name: "deposed leader",
            read: if ok_setup { read } else { None },
            expected: ReadOutcome::NoLease,
            violations: c.violations().len(),
        }
    }

    /// Read sent to a newer leader whose commit index already covers `w` and
    /// which has no limbo region.
    pub fn new_leader_without_limbo() -> CaseResult {
        let mut c = committed_w();
        c.crash(0);
        c.advance(Duration::from_millis(100));
        c.elect(1);
        let no_limbo = c.node(1).limbo().is_none() && !c.node(1).has_own_term_commit();
        let read = c.read_now(1, KEY_W);
        CaseResult {
            name: "new leader without limbo",
            read: if no_limbo { read } else { None },
            expected: ReadOutcome::Values(alloc::vec![W]),
            violations: c.violations().len(),
        }
    }

    /// Read sent to a newer leader that has `w` in its limbo region.
    pub fn new_leader_with_w_in_limbo() -> CaseResult {
        let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
        c.elect(0);
        c.advance(Duration::from_millis(1));
        c.write(0, KEY_OTHER, OTHER);
        c.deliver_all();
        c.heartbeat(0);
        c.deliver_all();
        // w reaches node 1 and commits on node 0, but no follower hears of the commit.
        c.cut(0, 2);
        let w = c.write(0, KEY_W, W);
        c.deliver_all();
        let committed = c.write_outcome(w) == Some(WriteOutcome::Ok);
        c.crash(0);
        c.heal();
        c.advance(Duration::from_millis(100));
        c.elect(1);
        let limbo = c.node(1).limbo_keys().contains(&KEY_W);
        let read = c.read_now(1, KEY_W);
        let other = c.read_now(1, KEY_OTHER);
        let ok_setup = committed && limbo && other == Some(ReadOutcome::Values(alloc::vec![OTHER]));
        CaseResult {
            name: "new leader with w in limbo",
            read: if ok_setup { read } else { None },
            expected: ReadOutcome::LimboConflict,
            violations: c.violations().len(),
        }
    }

    /// Read sent to a newer leader whose commit index passed `w` through an own-term commit.
    pub fn new_leader_after_own_commit() -> CaseResult {
        let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
        c.elect(0);
        c.advance(Duration::from_millis(1));
        c.cut(0, 2);
        c.write(0, KEY_W, W);
        c.deliver_all();
        c.crash(0);
        c.heal();
        c.advance(Duration::from_millis(100));
        c.elect(1);
        let limbo_before = c.node(1).limbo_keys().contains(&KEY_W);
        c.advance(delta());
        c.wakeup(1);
        c.deliver_all();
        let own = c.node(1).has_own_term_commit() && c.node(1).commit_index() > 2;
        let read = c.read_now(1, KEY_W);
        CaseResult {
            name: "new leader after own-term commit",
            read: if limbo_before && own { read } else { None },
            expected: ReadOutcome::Values(alloc::vec![W]),
            violations: c.violations().len(),
        }
    }

    pub fn all_cases() -> Vec<CaseResult> {
        alloc::vec![same_leader(), deposed_leader(), new_leader_without_limbo(), new_leader_with_w_in_limbo(), new_leader_after_own_commit()]
    }
}
