use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use super::{
    ClockMode, Command, Key, LogEntry, LogIndex, MechanismConfig, MechanismKind, Message, NodeId,
    Output, ReadOutcome, ReqId, Role, Term, WriteOutcome,
};
use crate::clock::{is_older_than, DriftTimer, LocalClock, NodeClock, TimeInterval};
use crate::rng::SeededRng;
use crate::time::SimTime;
use crate::workload::Value;

const MAX_BATCH: usize = 128;

/// Everything time-related a node owns.
#[derive(Clone, Debug)]
pub struct NodeTiming {
    pub clock: NodeClock,
    pub local: LocalClock,
    /// Drift bound while measuring one lease duration.
    pub epsilon: Duration,
    pub election_rng: SeededRng,
}

#[derive(Clone, Debug)]
struct QuorumRead {
    req: ReqId,
    key: Key,
    acks: Vec<bool>,
    confirmed: bool,
    read_index: Option<LogIndex>,
}

#[derive(Clone, Debug)]
pub struct Node {
    id: NodeId,
    n: usize,
    cfg: MechanismConfig,
    timing: NodeTiming,

    role: Role,
    term: Term,
    voted_for: Option<NodeId>,
    log: Vec<LogEntry>,
    timers: Vec<DriftTimer>,
    commit_index: LogIndex,
    last_applied: LogIndex,
    kv: BTreeMap<Key, Vec<Value>>,
    leader_hint: Option<NodeId>,
    last_leader_contact: Option<SimTime>,
    votes: Vec<bool>,

    next_index: Vec<LogIndex>,
    match_index: Vec<LogIndex>,
    sent_upto: Vec<LogIndex>,
    last_prev_term_index: LogIndex,
    prior_latest: Option<TimeInterval>,
    guard_skip: bool,
    limbo: Option<(LogIndex, LogIndex)>,
    limbo_keys: BTreeSet<Key>,
    limbo_end_lease: bool,
    own_term_committed: bool,
    ongaro_s: Vec<Option<SimTime>>,
    pending_writes: BTreeMap<LogIndex, ReqId>,
    reads: BTreeMap<u64, QuorumRead>,
    next_read_id: u64,
    relinquishing: bool,
    wakeup_at: Option<SimTime>,

    log_dirty_from: Option<LogIndex>,
}

impl Node {
    pub fn new(id: NodeId, n: usize, cfg: MechanismConfig, timing: NodeTiming) -> Self {
        Node {
            id,
            n,
            cfg,
            timing,
            role: Role::Follower,
            term: 0,
            voted_for: None,
            log: Vec::new(),
            timers: Vec::new(),
            commit_index: 0,
            last_applied: 0,
            kv: BTreeMap::new(),
            leader_hint: None,
            last_leader_contact: None,
            votes: vec![false; n],
            next_index: vec![1; n],
            match_index: vec![0; n],
            sent_upto: vec![0; n],
            last_prev_term_index: 0,
            prior_latest: None,
            guard_skip: false,
            limbo: None,
            limbo_keys: BTreeSet::new(),
            limbo_end_lease: false,
            own_term_committed: false,
            ongaro_s: vec![None; n],
            pending_writes: BTreeMap::new(),
            reads: BTreeMap::new(),
            next_read_id: 0,
            relinquishing: false,
            wakeup_at: None,
            log_dirty_from: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    pub fn term(&self) -> Term {
        self.term
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn entry(&self, index: LogIndex) -> Option<&LogEntry> {
        if index == 0 {
            return None;
        }
        self.log.get(index as usize - 1)
    }

    pub fn last_index(&self) -> LogIndex {
        self.log.len() as LogIndex
    }

    pub fn last_term(&self) -> Term {
        self.log.last().map_or(0, |e| e.term)
    }

    pub fn commit_index(&self) -> LogIndex {
        self.commit_index
    }

    pub fn last_applied(&self) -> LogIndex {
        self.last_applied
    }

    pub fn kv(&self) -> &BTreeMap<Key, Vec<Value>> {
        &self.kv
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.cfg
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_hint
    }

    pub fn last_prev_term_index(&self) -> LogIndex {
        self.last_prev_term_index
    }

    /// Limbo region bounds (inclusive) while the leader has no own-term commit.
    pub fn limbo(&self) -> Option<(LogIndex, LogIndex)> {
        self.limbo
    }

    pub fn limbo_keys(&self) -> &BTreeSet<Key> {
        &self.limbo_keys
    }

    pub fn has_own_term_commit(&self) -> bool {
        self.own_term_committed
    }

    pub fn match_index(&self, peer: NodeId) -> LogIndex {
        self.match_index[peer]
    }

    /// Lowest log index rewritten or appended since the last call.
    pub fn take_log_dirty(&mut self) -> Option<LogIndex> {
        self.log_dirty_from.take()
    }

    pub fn clock_mut(&mut self) -> &mut NodeClock {
        &mut self.timing.clock
    }

    pub fn local_clock(&self) -> LocalClock {
        self.timing.local
    }

    fn majority(&self) -> usize {
        self.n / 2 + 1
    }

    fn peers(&self) -> impl Iterator<Item = NodeId> + 'static {
        let (id, n) = (self.id, self.n);
        (0..n).filter(move |&p| p != id)
    }

    fn local_now(&self, now: SimTime) -> SimTime {
        self.timing.local.now(now)
    }

    fn election_delay(&mut self) -> Duration {
        let et = self.cfg.election_timeout;
        let extra = et.as_nanos() as f64 * self.cfg.election_jitter * self.timing.election_rng.unit();
        et + Duration::from_nanos(extra as u64)
    }

    fn reset_election_timer(&mut self, out: &mut Vec<Output>) {
        let after = self.election_delay();
        out.push(Output::ResetElectionTimer { after });
    }

    fn mark_dirty(&mut self, index: LogIndex) {
        self.log_dirty_from = Some(self.log_dirty_from.map_or(index, |d| d.min(index)));
    }

    // ---- lifecycle ----

    pub fn start(&mut self, out: &mut Vec<Output>) {
        self.reset_election_timer(out);
    }

    /// Drops volatile state. The world stops delivering to a crashed node.
    pub fn crash(&mut self) {
        self.role = Role::Follower;
        self.pending_writes.clear();
        self.reads.clear();
        self.relinquishing = false;
    }

    /// Comes back with the durable state (term, vote, log) intact.
    pub fn restart(&mut self, now: SimTime, out: &mut Vec<Output>) {
        self.role = Role::Follower;
        self.commit_index = 0;
        self.last_applied = 0;
        self.kv.clear();
        self.leader_hint = None;
        self.last_leader_contact = None;
        self.clear_leader_state();
        let timer = self.timing.local.start_timer(now);
        for t in self.timers.iter_mut() {
            *t = timer;
        }
        self.reset_election_timer(out);
    }

    fn clear_leader_state(&mut self) {
        self.pending_writes.clear();
        self.reads.clear();
        self.limbo = None;
        self.limbo_keys.clear();
        self.limbo_end_lease = false;
        self.own_term_committed = false;
        self.prior_latest = None;
        self.guard_skip = false;
        self.relinquishing = false;
        self.wakeup_at = None;
    }

    fn step_down(&mut self, new_term: Term, out: &mut Vec<Output>) {
        let was_leader = self.role == Role::Leader;
        if new_term > self.term {
            self.term = new_term;
            self.voted_for = None;
            self.leader_hint = None;
        }
        self.role = Role::Follower;
        if was_leader {
            self.fail_pending(out);
            self.clear_leader_state();
            out.push(Output::SteppedDown { term: self.term });
            self.reset_election_timer(out);
        }
    }

    fn fail_pending(&mut self, out: &mut Vec<Output>) {
        for (_, req) in core::mem::take(&mut self.pending_writes) {
            out.push(Output::WriteDone { req, outcome: WriteOutcome::NotLeader });
        }
        for (_, r) in core::mem::take(&mut self.reads) {
            out.push(Output::ReadDone { req: r.req, key: r.key, outcome: ReadOutcome::NotLeader });
        }
    }

    // ---- elections ----

    pub fn on_election_timeout(&mut self, now: SimTime, out: &mut Vec<Output>) {
        if self.role == Role::Leader {
            return;
        }
        self.term += 1;
        self.role = Role::Candidate;
        self.voted_for = Some(self.id);
        self.leader_hint = None;
        self.votes = vec![false; self.n];
        self.votes[self.id] = true;
        self.reset_election_timer(out);
        let (last_index, last_term) = (self.last_index(), self.last_term());
        for p in self.peers() {
            out.push(Output::Send {
                to: p,
                msg: Message::RequestVote { term: self.term, candidate: self.id, last_index, last_term },
            });
        }
        if self.majority() <= 1 {
            self.become_leader(now, out);
        }
    }

    fn ignores_votes(&self, now: SimTime) -> bool {
        if self.cfg.kind != MechanismKind::OngaroLease {
            return false;
        }
        if self.role == Role::Leader {
            return true;
        }
        match self.last_leader_contact {
            Some(t) => self.local_now(now) - t < self.cfg.election_timeout,
            None => false,
        }
    }

    fn handle_request_vote(
        &mut self,
        now: SimTime,
        from: NodeId,
        term: Term,
        last_index: LogIndex,
        last_term: Term,
        out: &mut Vec<Output>,
    ) {
        if term > self.term && self.ignores_votes(now) {
            return;
        }
        if term > self.term {
            self.step_down(term, out);
        }
        let up_to_date =
            last_term > self.last_term() || (last_term == self.last_term() && last_index >= self.last_index());
        let granted = term == self.term
            && self.role != Role::Leader
            && self.voted_for.is_none_or(|v| v == from)
            && up_to_date;
        if granted {
            self.voted_for = Some(from);
            self.reset_election_timer(out);
        }
        out.push(Output::Send { to: from, msg: Message::VoteReply { term: self.term, granted } });
    }

    fn handle_vote_reply(&mut self, now: SimTime, from: NodeId, term: Term, granted: bool, out: &mut Vec<Output>) {
        if term > self.term {
            self.step_down(term, out);
            return;
        }
        if self.role != Role::Candidate || term != self.term || !granted {
            return;
        }
        self.votes[from] = true;
        if self.votes.iter().filter(|v| **v).count() >= self.majority() {
            self.become_leader(now, out);
        }
    }

    fn become_leader(&mut self, now: SimTime, out: &mut Vec<Output>) {
        self.role = Role::Leader;
        self.leader_hint = Some(self.id);
        self.clear_leader_state();
        let last = self.last_index();
        for p in 0..self.n {
            self.next_index[p] = last + 1;
            self.match_index[p] = 0;
            self.sent_upto[p] = 0;
            self.ongaro_s[p] = None;
        }
        self.last_prev_term_index = last;
        if self.commit_index < last {
            self.limbo = Some((self.commit_index + 1, last));
            for i in self.commit_index + 1..=last {
                match self.log[i as usize - 1].command {
                    Command::Append { key, .. } => {
                        self.limbo_keys.insert(key);
                    }
                    Command::EndLease => self.limbo_end_lease = true,
                    Command::Noop => {}
                }
            }
        }
        self.prior_latest = self.log.iter().map(|e| e.write_time).max_by_key(|w| w.latest);
        self.guard_skip = last == 0
            || (last <= self.commit_index && self.log[last as usize - 1].command == Command::EndLease);
        out.push(Output::BecameLeader { term: self.term });
        self.append(now, Command::Noop);
        self.broadcast_append(now, out);
        out.push(Output::ScheduleHeartbeat { after: self.cfg.heartbeat_interval, term: self.term });
        self.try_advance_commit(now, out);
    }

    // ---- replication ----

    fn append(&mut self, now: SimTime, command: Command) -> LogIndex {
        let index = self.last_index() + 1;
        let write_time = self.timing.clock.interval_now(now);
        self.log.push(LogEntry { term: self.term, index, command, write_time, created_at: now });
        self.timers.push(self.timing.local.start_timer(now));
        self.match_index[self.id] = index;
        self.mark_dirty(index);
        index
    }

    fn send_append(&mut self, now: SimTime, peer: NodeId, cap: usize, out: &mut Vec<Output>) {
        let next = self.next_index[peer].max(1);
        let prev_index = next - 1;
        let prev_term = self.entry(prev_index).map_or(0, |e| e.term);
        let from = next as usize - 1;
        let to = self.log.len().min(from + cap);
        let entries = self.log[from.min(self.log.len())..to].to_vec();
        self.sent_upto[peer] = self.sent_upto[peer].max(prev_index + entries.len() as LogIndex);
        out.push(Output::Send {
            to: peer,
            msg: Message::AppendEntries {
                term: self.term,
                leader: self.id,
                prev_index,
                prev_term,
                entries,
                leader_commit: self.commit_index,
                sent_local: self.local_now(now),
            },
        });
    }

    fn broadcast_append(&mut self, now: SimTime, out: &mut Vec<Output>) {
        for p in self.peers() {
            self.send_append(now, p, MAX_BATCH, out);
        }
    }

    pub fn on_heartbeat(&mut self, now: SimTime, term: Term, out: &mut Vec<Output>) {
        if self.role != Role::Leader || term != self.term {
            return;
        }
        if self.cfg.kind == MechanismKind::LeaseGuard && self.own_term_committed && !self.relinquishing {
            let newest_age = self.timers.last().map(|t| t.elapsed(now));
            if newest_age.is_none_or(|age| age >= self.cfg.noop_period) {
                self.append(now, Command::Noop);
            }
        }
        self.broadcast_append(now, out);
        out.push(Output::ScheduleHeartbeat { after: self.cfg.heartbeat_interval, term: self.term });
    }

    fn handle_append_entries(
        &mut self,
        now: SimTime,
        from: NodeId,
        msg: Message,
        out: &mut Vec<Output>,
    ) {
        let Message::AppendEntries { term, leader, prev_index, prev_term, entries, leader_commit, sent_local } = msg
        else {
            return;
        };
        let reply = |term, success, match_index, hint| Output::Send {
            to: from,
            msg: Message::AppendReply { term, success, match_index, hint, sent_local },
        };
        if term < self.term {
            out.push(reply(self.term, false, 0, self.last_index()));
            return;
        }
        if term > self.term || self.role != Role::Follower {
            self.step_down(term, out);
        }
        self.leader_hint = Some(leader);
        self.last_leader_contact = Some(self.local_now(now));
        self.reset_election_timer(out);

        if prev_index > self.last_index() {
            out.push(reply(self.term, false, 0, self.last_index()));
            return;
        }
        if prev_index > 0 {
            let local_term = self.log[prev_index as usize - 1].term;
            if local_term != prev_term {
                let mut hint = prev_index - 1;
                while hint > self.commit_index && self.log[hint as usize - 1].term == local_term {
                    hint -= 1;
                }
                out.push(reply(self.term, false, 0, hint));
                return;
            }
        }
        let timer = self.timing.local.start_timer(now);
        let last_new = prev_index + entries.len() as LogIndex;
        for e in entries {
            let idx = e.index;
            if idx <= self.last_index() {
                if self.log[idx as usize - 1].term == e.term {
                    continue;
                }
                debug_assert!(idx > self.commit_index, "truncating committed entry");
                self.log.truncate(idx as usize - 1);
                self.timers.truncate(idx as usize - 1);
            }
            self.log.push(e);
            self.timers.push(timer);
            self.mark_dirty(idx);
        }
        let match_index = last_new;
        if leader_commit > self.commit_index {
            let new_commit = leader_commit.min(match_index);
            if new_commit > self.commit_index {
                self.commit_index = new_commit;
                self.apply(now, out);
            }
        }
        out.push(reply(self.term, true, match_index, self.last_index()));
    }

    fn handle_append_reply(&mut self, now: SimTime, from: NodeId, msg: Message, out: &mut Vec<Output>) {
        let Message::AppendReply { term, success, match_index, hint, sent_local } = msg else {
            return;
        };
        if term > self.term {
            self.step_down(term, out);
            return;
        }
        if self.role != Role::Leader || term != self.term {
            return;
        }
        if success {
            if match_index > self.match_index[from] {
                self.match_index[from] = match_index;
            }
            self.next_index[from] = self.next_index[from].max(self.match_index[from] + 1);
            let s = &mut self.ongaro_s[from];
            *s = Some(s.map_or(sent_local, |prev| prev.max(sent_local)));
            self.try_advance_commit(now, out);
            // Every append is broadcast right away, so this only continues
            // batches that hit the size cap.
            if self.role == Role::Leader
                && self.sent_upto[from] < self.last_index()
                && self.next_index[from] <= self.last_index()
            {
                self.send_append(now, from, MAX_BATCH, out);
            }
        } else {
            let next = self.next_index[from].saturating_sub(1).min(hint + 1);
            self.next_index[from] = next.max(self.match_index[from] + 1).max(1);
            self.send_append(now, from, MAX_BATCH, out);
        }
    }

    /// Whether the lease guard currently lets this leader commit. Returns the
    /// clock reading used (interval mode) and, when blocked, how long to wait.
    fn commit_guard(&mut self, now: SimTime) -> (bool, Option<TimeInterval>, Duration) {
        if self.cfg.kind != MechanismKind::LeaseGuard || self.guard_skip {
            return (true, None, Duration::ZERO);
        }
        match self.cfg.clock_mode {
            ClockMode::Interval => {
                let reading = self.timing.clock.interval_now(now);
                let Some(prior) = self.prior_latest else {
                    return (true, Some(reading), Duration::ZERO);
                };
                if is_older_than(prior, self.cfg.delta, reading) {
                    (true, Some(reading), Duration::ZERO)
                } else {
                    let expiry = prior.latest + self.cfg.delta;
                    let wait = (expiry - reading.earliest) + Duration::from_nanos(1);
                    (false, Some(reading), wait)
                }
            }
            ClockMode::DriftTimer => {
                if self.last_prev_term_index == 0 {
                    return (true, None, Duration::ZERO);
                }
                let timer = self.timers[self.last_prev_term_index as usize - 1];
                let need = self.cfg.delta + self.timing.epsilon;
                if timer.elapsed_at_least(now, need) {
                    (true, None, Duration::ZERO)
                } else {
                    (false, None, timer.true_time_until(now, need))
                }
            }
        }
    }

    fn try_advance_commit(&mut self, now: SimTime, out: &mut Vec<Output>) {
        if self.role != Role::Leader {
            return;
        }
        let mut acked: Vec<LogIndex> = self.match_index.clone();
        acked[self.id] = self.last_index();
        acked.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = acked[self.majority() - 1];
        if candidate <= self.commit_index || self.log[candidate as usize - 1].term != self.term {
            return;
        }
        let (open, reading, wait) = self.commit_guard(now);
        if !open {
            let at = now + wait;
            if self.wakeup_at.is_none_or(|w| w <= now || at < w) {
                self.wakeup_at = Some(at);
                out.push(Output::Wakeup { after: wait });
            }
            return;
        }
        let from = self.commit_index;
        self.commit_index = candidate;
        out.push(Output::Committed { from, to: candidate, reading });
        if !self.own_term_committed {
            self.own_term_committed = true;
            self.limbo = None;
            self.limbo_keys.clear();
            self.limbo_end_lease = false;
            out.push(Output::LeaseAcquired { term: self.term });
        }
        self.apply(now, out);
        self.resume_quorum_reads(now, out);
    }

    fn apply(&mut self, now: SimTime, out: &mut Vec<Output>) {
        let mut relinquished = false;
        while self.last_applied < self.commit_index {
            self.last_applied += 1;
            let e = &self.log[self.last_applied as usize - 1];
            match e.command {
                Command::Append { key, value } => self.kv.entry(key).or_default().push(value),
                Command::EndLease => {
                    if self.role == Role::Leader && e.term == self.term {
                        relinquished = true;
                    }
                }
                Command::Noop => {}
            }
            if self.role == Role::Leader {
                if let Some(req) = self.pending_writes.remove(&self.last_applied) {
                    out.push(Output::WriteDone { req, outcome: WriteOutcome::Ok });
                }
            }
        }
        if relinquished {
            // Let followers learn the end-lease commit before leaving.
            self.broadcast_append(now, out);
            let term = self.term;
            self.step_down(term, out);
        }
    }

    pub fn on_wakeup(&mut self, now: SimTime, out: &mut Vec<Output>) {
        if self.wakeup_at.is_some_and(|w| w <= now) {
            self.wakeup_at = None;
        }
        self.try_advance_commit(now, out);
    }

    // ---- client operations ----

    pub fn client_write(&mut self, now: SimTime, req: ReqId, key: Key, value: Value, out: &mut Vec<Output>) {
        if self.role != Role::Leader || self.relinquishing {
            out.push(Output::WriteDone { req, outcome: WriteOutcome::NotLeader });
            return;
        }
        if self.cfg.kind == MechanismKind::LeaseGuard && !self.cfg.defer_commit && !self.own_term_committed {
            let (open, _, _) = self.commit_guard(now);
            if !open {
                out.push(Output::WriteDone { req, outcome: WriteOutcome::NoLease });
                return;
            }
        }
        let index = self.append(now, Command::Append { key, value });
        self.pending_writes.insert(index, req);
        self.broadcast_append(now, out);
        self.try_advance_commit(now, out);
    }

    pub fn client_read(&mut self, now: SimTime, req: ReqId, key: Key, out: &mut Vec<Output>) {
        if self.role != Role::Leader {
            out.push(Output::ReadDone { req, key, outcome: ReadOutcome::NotLeader });
            return;
        }
        if self.relinquishing {
            out.push(Output::ReadDone { req, key, outcome: ReadOutcome::NoLease });
            return;
        }
        let verdict = match self.cfg.kind {
            MechanismKind::Inconsistent => Ok(()),
            MechanismKind::Quorum => {
                self.start_quorum_read(now, req, key, out);
                return;
            }
            MechanismKind::OngaroLease => {
                if self.own_term_committed && self.ongaro_has_lease(now) {
                    Ok(())
                } else {
                    Err(ReadOutcome::NoLease)
                }
            }
            MechanismKind::LeaseGuard => self.leaseguard_read_check(now, key),
        };
        let outcome = match verdict {
            Ok(()) => self.serve(key),
            Err(o) => o,
        };
        out.push(Output::ReadDone { req, key, outcome });
    }

    fn serve(&self, key: Key) -> ReadOutcome {
        debug_assert!(self.last_applied >= self.commit_index);
        ReadOutcome::Values(self.kv.get(&key).cloned().unwrap_or_default())
    }

    fn leaseguard_read_check(&mut self, now: SimTime, key: Key) -> Result<(), ReadOutcome> {
        if self.commit_index == 0 {
            return Err(ReadOutcome::NoLease);
        }
        let committed = self.log[self.commit_index as usize - 1].clone();
        match self.cfg.clock_mode {
            ClockMode::Interval => {
                if committed.term < self.term && committed.command == Command::EndLease {
                    return Err(ReadOutcome::NoLease);
                }
                let reading = self.timing.clock.interval_now(now);
                if is_older_than(committed.write_time, self.cfg.delta, reading) {
                    return Err(ReadOutcome::NoLease);
                }
                if !self.own_term_committed {
                    if !self.cfg.inherited_reads || self.limbo_end_lease {
                        return Err(ReadOutcome::NoLease);
                    }
                    if self.limbo_keys.contains(&key) {
                        return Err(ReadOutcome::LimboConflict);
                    }
                }
                Ok(())
            }
            ClockMode::DriftTimer => {
                if !self.own_term_committed || committed.term != self.term {
                    return Err(ReadOutcome::NoLease);
                }
                let timer = self.timers[self.commit_index as usize - 1];
                let limit = self.cfg.delta.saturating_sub(self.timing.epsilon);
                if timer.elapsed_less_than(now, limit) {
                    Ok(())
                } else {
                    Err(ReadOutcome::NoLease)
                }
            }
        }
    }

    /// Ongaro-style lease: a majority of follower acknowledgments (the
    /// leader counting itself as fresh) were sent less than ET ago.
    pub fn ongaro_has_lease(&self, now: SimTime) -> bool {
        let local = self.local_now(now);
        let fresh = self
            .peers()
            .filter(|&p| self.ongaro_s[p].is_some_and(|s| local - s < self.cfg.election_timeout))
            .count();
        fresh + 1 >= self.majority()
    }

    fn start_quorum_read(&mut self, now: SimTime, req: ReqId, key: Key, out: &mut Vec<Output>) {
        let read_id = self.next_read_id;
        self.next_read_id += 1;
        let mut acks = vec![false; self.n];
        acks[self.id] = true;
        let read_index = self.own_term_committed.then_some(self.commit_index);
        self.reads.insert(read_id, QuorumRead { req, key, acks, confirmed: false, read_index });
        for p in self.peers() {
            out.push(Output::Send { to: p, msg: Message::ReadCheck { term: self.term, read_id } });
        }
        self.check_quorum_read(now, read_id, out);
    }

    fn check_quorum_read(&mut self, _now: SimTime, read_id: u64, out: &mut Vec<Output>) {
        let majority = self.majority();
        let applied = self.last_applied;
        let Some(r) = self.reads.get_mut(&read_id) else {
            return;
        };
        if !r.confirmed && r.acks.iter().filter(|a| **a).count() >= majority {
            r.confirmed = true;
        }
        if r.confirmed && r.read_index.is_some_and(|i| applied >= i) {
            let r = self.reads.remove(&read_id).unwrap_or_else(|| unreachable!());
            let outcome = self.serve(r.key);
            out.push(Output::ReadDone { req: r.req, key: r.key, outcome });
        }
    }

    fn resume_quorum_reads(&mut self, now: SimTime, out: &mut Vec<Output>) {
        if self.reads.is_empty() {
            return;
        }
        let commit = self.commit_index;
        let ids: Vec<u64> = self.reads.keys().copied().collect();
        for id in ids {
            if let Some(r) = self.reads.get_mut(&id) {
                if r.read_index.is_none() {
                    r.read_index = Some(commit);
                }
            }
            self.check_quorum_read(now, id, out);
        }
    }

    fn handle_read_check(&mut self, from: NodeId, term: Term, read_id: u64, out: &mut Vec<Output>) {
        if term < self.term {
            out.push(Output::Send { to: from, msg: Message::ReadCheckReply { term: self.term, read_id, ok: false } });
            return;
        }
        if term > self.term {
            self.step_down(term, out);
        }
        let ok = self.role != Role::Leader;
        if ok {
            self.leader_hint = Some(from);
        }
        out.push(Output::Send { to: from, msg: Message::ReadCheckReply { term: self.term, read_id, ok } });
    }

    fn handle_read_check_reply(
        &mut self,
        now: SimTime,
        from: NodeId,
        term: Term,
        read_id: u64,
        ok: bool,
        out: &mut Vec<Output>,
    ) {
        if term > self.term {
            self.step_down(term, out);
            return;
        }
        if self.role != Role::Leader || term != self.term || !ok {
            return;
        }
        if let Some(r) = self.reads.get_mut(&read_id) {
            r.acks[from] = true;
        }
        self.check_quorum_read(now, read_id, out);
    }

    /// Planned hand-off: commit an end-lease entry, then step down.
    pub fn relinquish(&mut self, now: SimTime, out: &mut Vec<Output>) {
        if self.role != Role::Leader || self.relinquishing {
            return;
        }
        self.relinquishing = true;
        for (_, r) in core::mem::take(&mut self.reads) {
            out.push(Output::ReadDone { req: r.req, key: r.key, outcome: ReadOutcome::NoLease });
        }
        self.append(now, Command::EndLease);
        self.broadcast_append(now, out);
        self.try_advance_commit(now, out);
    }

    /// Appends entries without replicating them (fault scripting only).
    pub fn stage_entries(&mut self, now: SimTime, commands: &[Command]) -> Vec<LogIndex> {
        if self.role != Role::Leader {
            return Vec::new();
        }
        commands.iter().map(|c| self.append(now, *c)).collect()
    }

    /// Sends one AppendEntries carrying everything `peer` is missing.
    pub fn replicate_all_to(&mut self, now: SimTime, peer: NodeId, out: &mut Vec<Output>) {
        if self.role == Role::Leader {
            self.next_index[peer] = self.match_index[peer] + 1;
            self.send_append(now, peer, usize::MAX / 2, out);
        }
    }

    pub fn on_message(&mut self, now: SimTime, from: NodeId, msg: Message, out: &mut Vec<Output>) {
        match msg {
            Message::AppendEntries { .. } => self.handle_append_entries(now, from, msg, out),
            Message::AppendReply { .. } => self.handle_append_reply(now, from, msg, out),
            Message::RequestVote { term, candidate, last_index, last_term } => {
                self.handle_request_vote(now, candidate, term, last_index, last_term, out)
            }
            Message::VoteReply { term, granted } => self.handle_vote_reply(now, from, term, granted, out),
            Message::ReadCheck { term, read_id } => self.handle_read_check(from, term, read_id, out),
            Message::ReadCheckReply { term, read_id, ok } => {
                self.handle_read_check_reply(now, from, term, read_id, ok, out)
            }
        }
    }
}
