//! Raft replica with pluggable read-consistency mechanisms.
//!
//! [`Node`] is sans-IO: every entry point takes the current true time and
//! pushes [`Output`]s (messages, timer requests, client completions) that
//! the surrounding world turns into scheduled events.

mod dump;
mod node;

use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use crate::clock::TimeInterval;
use crate::net::LinkClass;
use crate::time::SimTime;
use crate::workload::Value;

pub use dump::{dump_log, dump_node, format_command};
pub use node::{Node, NodeTiming};

pub type NodeId = usize;
pub type Term = u64;
pub type LogIndex = u64;
pub type Key = u64;
pub type ReqId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Append { key: Key, value: Value },
    Noop,
    EndLease,
}

impl Command {
    pub fn key(&self) -> Option<Key> {
        match self {
            Command::Append { key, .. } => Some(*key),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub term: Term,
    pub index: LogIndex,
    pub command: Command,
    pub write_time: TimeInterval,
    /// True creation instant. Invisible to the protocol; kept for the observer.
    pub created_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Follower => "follower",
            Role::Candidate => "candidate",
            Role::Leader => "leader",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MechanismKind {
    Inconsistent,
    Quorum,
    OngaroLease,
    LeaseGuard,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Inconsistent => "inconsistent",
            MechanismKind::Quorum => "quorum",
            MechanismKind::OngaroLease => "ongaro",
            MechanismKind::LeaseGuard => "leaseguard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "inconsistent" => MechanismKind::Inconsistent,
            "quorum" => MechanismKind::Quorum,
            "ongaro" => MechanismKind::OngaroLease,
            "leaseguard" => MechanismKind::LeaseGuard,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClockMode {
    Interval,
    DriftTimer,
}

impl ClockMode {
    pub fn name(self) -> &'static str {
        match self {
            ClockMode::Interval => "interval",
            ClockMode::DriftTimer => "drift-timer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "interval" => Some(ClockMode::Interval),
            "drift-timer" => Some(ClockMode::DriftTimer),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub defer_commit: bool,
    pub inherited_reads: bool,
    /// Lease duration.
    pub delta: Duration,
    pub election_timeout: Duration,
    /// Election timeouts are drawn from `[ET, ET * (1 + jitter))`.
    pub election_jitter: f64,
    pub heartbeat_interval: Duration,
    pub clock_mode: ClockMode,
    pub noop_period: Duration,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            kind: MechanismKind::LeaseGuard,
            defer_commit: true,
            inherited_reads: true,
            delta: Duration::from_secs(1),
            election_timeout: Duration::from_millis(500),
            election_jitter: 1.0,
            heartbeat_interval: Duration::from_millis(50),
            clock_mode: ClockMode::Interval,
            noop_period: Duration::from_millis(500),
        }
    }
}

impl MechanismConfig {
    pub fn inconsistent() -> Self {
        MechanismConfig { kind: MechanismKind::Inconsistent, ..Self::default() }
    }

    pub fn quorum() -> Self {
        MechanismConfig { kind: MechanismKind::Quorum, ..Self::default() }
    }

    pub fn ongaro() -> Self {
        MechanismConfig { kind: MechanismKind::OngaroLease, ..Self::default() }
    }

    /// LeaseGuard with neither optimization.
    pub fn log_lease() -> Self {
        MechanismConfig { defer_commit: false, inherited_reads: false, ..Self::default() }
    }

    pub fn defer_commit() -> Self {
        MechanismConfig { defer_commit: true, inherited_reads: false, ..Self::default() }
    }

    pub fn leaseguard() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.kind == MechanismKind::LeaseGuard
            && self.inherited_reads
            && self.clock_mode == ClockMode::DriftTimer
        {
            return Err("inherited reads need bounded-uncertainty clocks, not drift timers");
        }
        if self.election_timeout.is_zero() {
            return Err("election timeout must be positive");
        }
        if self.heartbeat_interval.is_zero() || self.heartbeat_interval >= self.election_timeout {
            return Err("heartbeat interval must be positive and below the election timeout");
        }
        if !(self.election_jitter >= 0.0) {
            return Err("election jitter must be >= 0");
        }
        if self.kind == MechanismKind::LeaseGuard && (self.delta.is_zero() || self.noop_period.is_zero()) {
            return Err("lease duration and no-op period must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    AppendEntries {
        term: Term,
        leader: NodeId,
        prev_index: LogIndex,
        prev_term: Term,
        entries: Vec<LogEntry>,
        leader_commit: LogIndex,
        /// Sender's local clock when the request left; echoed in the reply.
        sent_local: SimTime,
    },
    AppendReply {
        term: Term,
        success: bool,
        match_index: LogIndex,
        /// On failure, the responder's last index that may still match.
        hint: LogIndex,
        sent_local: SimTime,
    },
    RequestVote {
        term: Term,
        candidate: NodeId,
        last_index: LogIndex,
        last_term: Term,
    },
    VoteReply {
        term: Term,
        granted: bool,
    },
    ReadCheck {
        term: Term,
        read_id: u64,
    },
    ReadCheckReply {
        term: Term,
        read_id: u64,
        ok: bool,
    },
}

impl Message {
    pub fn class(&self) -> LinkClass {
        match self {
            Message::AppendEntries { .. } | Message::AppendReply { .. } => LinkClass::Replication,
            Message::RequestVote { .. } | Message::VoteReply { .. } => LinkClass::Vote,
            Message::ReadCheck { .. } | Message::ReadCheckReply { .. } => LinkClass::ReadCheck,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriteOutcome {
    Ok,
    NotLeader,
    NoLease,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    Values(Vec<Value>),
    NotLeader,
    NoLease,
    LimboConflict,
}

impl ReadOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ReadOutcome::Values(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Send { to: NodeId, msg: Message },
    ResetElectionTimer { after: Duration },
    ScheduleHeartbeat { after: Duration, term: Term },
    Wakeup { after: Duration },
    WriteDone { req: ReqId, outcome: WriteOutcome },
    ReadDone { req: ReqId, key: Key, outcome: ReadOutcome },
    /// Leader advanced its commit index. `reading` is the clock reading the
    /// lease guard was evaluated against, when one was taken.
    Committed { from: LogIndex, to: LogIndex, reading: Option<TimeInterval> },
    BecameLeader { term: Term },
    /// First commit of an entry from the leader's own term.
    LeaseAcquired { term: Term },
    SteppedDown { term: Term },
}
