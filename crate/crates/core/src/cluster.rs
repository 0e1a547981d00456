//! A simulated replica set plus open-loop clients, driven by the event loop.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use crate::clock::{max_drift_rate, ClockConfig, LocalClock, NodeClock};
use crate::config::{ConfigError, DriftMode, SimConfig};
use crate::kernel::{EventId, Scheduler};
use crate::net::{ActivePartition, FaultAction, Network, NodeSel, Side};
use crate::observer::{Observer, Violation};
use crate::raft::{Command, Key, Message, Node, NodeId, NodeTiming, Output, ReadOutcome, Term, WriteOutcome};
use crate::rng::{stream, SeededRng};
use crate::time::SimTime;
use crate::workload::{ClientLogEntry, History, KeySampler, OpType, PlannedOp, Value, WorkloadGen};

/// Client id used for values written by scripted faults.
pub const SCRIPT_CLIENT: u32 = u32::MAX;

/// How long the cluster may take to elect its first leader.
const BOOTSTRAP_LIMIT: Duration = Duration::from_secs(60);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkerKind {
    WorkloadStart,
    LeaderElected { node: NodeId, term: Term },
    LeaseAcquired { node: NodeId, term: Term },
    Crash { node: NodeId },
    Restart { node: NodeId },
    PartitionStart { index: usize },
    PartitionEnd { index: usize },
    ClockBroken { node: NodeId },
    StepDown { node: NodeId },
    LimboBurst { node: NodeId, entries: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Marker {
    pub at: SimTime,
    pub kind: MarkerKind,
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t", self.at)?;
        match self.kind {
            MarkerKind::WorkloadStart => write!(f, "workload-start"),
            MarkerKind::LeaderElected { node, term } => write!(f, "leader-elected node={node} term={term}"),
            MarkerKind::LeaseAcquired { node, term } => write!(f, "lease-acquired node={node} term={term}"),
            MarkerKind::Crash { node } => write!(f, "crash node={node}"),
            MarkerKind::Restart { node } => write!(f, "restart node={node}"),
            MarkerKind::PartitionStart { index } => write!(f, "partition-start index={index}"),
            MarkerKind::PartitionEnd { index } => write!(f, "partition-end index={index}"),
            MarkerKind::ClockBroken { node } => write!(f, "clock-broken node={node}"),
            MarkerKind::StepDown { node } => write!(f, "step-down node={node}"),
            MarkerKind::LimboBurst { node, entries } => write!(f, "limbo-burst node={node} entries={entries}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub history: History,
    pub markers: Vec<Marker>,
    /// Workload start: the first time any leader held a lease.
    pub t0: Option<SimTime>,
    pub end: SimTime,
    pub violations: Vec<Violation>,
    pub events: u64,
}

impl RunOutput {
    pub fn markers_text(&self) -> alloc::string::String {
        let mut s = alloc::string::String::new();
        for m in &self.markers {
            s.push_str(&alloc::format!("{m}\n"));
        }
        s
    }
}

#[derive(Debug)]
enum Event {
    Start(NodeId),
    Deliver { from: NodeId, to: NodeId, incarnation: u64, msg: Message },
    ElectionTimeout { node: NodeId, incarnation: u64 },
    Heartbeat { node: NodeId, incarnation: u64, term: Term },
    Wakeup { node: NodeId, incarnation: u64 },
    Dispatch(PlannedOp),
    Arrive { req: usize, node: NodeId, incarnation: u64 },
    Reply { req: usize, result: OpResult },
    Timeout { req: usize },
    Fault(usize),
    PartitionStart(usize),
    PartitionEnd(usize),
}

#[derive(Clone, Debug)]
struct OpResult {
    success: bool,
    exec: Option<SimTime>,
    values: Vec<Value>,
    not_leader: bool,
}

#[derive(Clone, Debug)]
struct Request {
    client: u32,
    entry: ClientLogEntry,
    done: bool,
}

pub struct Cluster {
    cfg: SimConfig,
    sched: Scheduler<Event>,
    nodes: Vec<Node>,
    net: Network,
    observer: Option<Observer>,
    election_timers: Vec<Option<EventId>>,
    workload: WorkloadGen,
    keys: KeySampler,
    script_rng: SeededRng,
    requests: Vec<Request>,
    /// Last known leader of each sticky client.
    sticky: BTreeMap<u32, NodeId>,
    client_seq: BTreeMap<u32, u32>,
    last_leader: Option<NodeId>,
    last_crashed: Option<NodeId>,
    script_seq: u32,
    markers: Vec<Marker>,
    t0: Option<SimTime>,
}

impl Cluster {
    pub fn new(cfg: SimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n = cfg.nodes;
        let net = Network::new(cfg.seed, n, cfg.latency).map_err(|_| ConfigError::Invalid("bad latency model"))?;
        let workload =
            WorkloadGen::new(cfg.workload.clone(), cfg.seed).map_err(|_| ConfigError::Invalid("bad key distribution"))?;
        let keys = workload.key_sampler();
        let max_rate = max_drift_rate(cfg.clock.epsilon, cfg.mechanism.delta);
        let nodes = (0..n)
            .map(|id| {
                let mut drift_rng = SeededRng::derive(cfg.seed, stream::DRIFT | id as u64);
                let rate = match cfg.clock.drift {
                    DriftMode::None => 0.0,
                    DriftMode::Extreme => {
                        if drift_rng.chance(0.5) {
                            max_rate
                        } else {
                            -max_rate
                        }
                    }
                    DriftMode::Uniform => max_rate * (2.0 * drift_rng.unit() - 1.0),
                };
                let timing = NodeTiming {
                    clock: NodeClock::new(
                        ClockConfig { max_error: cfg.clock.max_error, ..ClockConfig::default() },
                        SeededRng::derive(cfg.seed, stream::CLOCK | id as u64),
                    ),
                    local: LocalClock::new(rate),
                    epsilon: cfg.clock.epsilon,
                    election_rng: SeededRng::derive(cfg.seed, stream::ELECTION | id as u64),
                };
                Node::new(id, n, cfg.mechanism.clone(), timing)
            })
            .collect();
        Ok(Cluster {
            script_rng: SeededRng::derive(cfg.seed, stream::SCRIPT),
            sched: Scheduler::new(),
            nodes,
            net,
            observer: Some(Observer::new(n)),
            election_timers: vec![None; n],
            workload,
            keys,
            requests: Vec::new(),
            sticky: BTreeMap::new(),
            client_seq: BTreeMap::new(),
            last_leader: None,
            last_crashed: None,
            script_seq: 0,
            markers: Vec::new(),
            t0: None,
            cfg,
        })
    }

    /// Turns off invariant monitoring (it costs a little time per event).
    pub fn without_observer(mut self) -> Self {
        self.observer = None;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    /// Runs bootstrap, workload, and fault plan to completion.
    pub fn run(mut self) -> RunOutput {
        self.run_in_place();
        self.into_output()
    }

    /// Like [`Cluster::run`] but keeps the cluster for inspection.
    pub fn run_in_place(&mut self) {
        for id in 0..self.nodes.len() {
            self.sched.schedule(Duration::ZERO, Event::Start(id));
        }
        let mut sched = core::mem::take(&mut self.sched);
        let started = sched.run_while(self, SimTime::ZERO + BOOTSTRAP_LIMIT, |c| c.t0.is_some());
        self.sched = sched;
        if !started {
            return;
        }
        let t0 = self.sched.now();
        self.t0 = Some(t0);
        self.markers.push(Marker { at: t0, kind: MarkerKind::WorkloadStart });
        if let Some(op) = self.workload.next_op() {
            self.sched.schedule_at(t0 + op.at, Event::Dispatch(op));
        }
        for (i, e) in self.cfg.faults.events.iter().enumerate() {
            self.sched.schedule_at(t0 + e.at, Event::Fault(i));
        }
        for (i, p) in self.cfg.faults.partitions.iter().enumerate() {
            self.sched.schedule_at(t0 + p.from, Event::PartitionStart(i));
            self.sched.schedule_at(t0 + p.until, Event::PartitionEnd(i));
        }
        let end = t0 + self.cfg.workload.duration + 2 * self.cfg.mechanism.election_timeout;
        let mut sched = core::mem::take(&mut self.sched);
        sched.run_until(self, end);
        self.sched = sched;
    }

    pub fn into_output(self) -> RunOutput {
        let entries = self.requests.into_iter().map(|r| r.entry).collect();
        RunOutput {
            history: History::new(entries),
            markers: self.markers,
            t0: self.t0,
            end: self.sched.now(),
            violations: self.observer.map(Observer::into_violations).unwrap_or_default(),
            events: self.sched.executed(),
        }
    }

    fn current_leader(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_leader() && self.net.is_alive(n.id()))
            .max_by_key(|n| (n.term(), core::cmp::Reverse(n.id())))
            .map(|n| n.id())
    }

    fn resolve(&self, sel: &NodeSel) -> Option<NodeId> {
        match sel {
            NodeSel::Leader => self.current_leader(),
            NodeSel::LastCrashed => self.last_crashed,
            NodeSel::Node(id) => Some(*id),
        }
    }

    fn mark(&mut self, at: SimTime, kind: MarkerKind) {
        self.markers.push(Marker { at, kind });
    }

    /// Runs one node entry point with the observer around it, then turns
    /// its outputs into events.
    fn step(&mut self, sched: &mut Scheduler<Event>, id: NodeId, f: impl FnOnce(&mut Node, SimTime, &mut Vec<Output>)) {
        let now = sched.now();
        let mut out = Vec::new();
        let node = &mut self.nodes[id];
        let before = self.observer.as_ref().map(|o| o.begin(node));
        f(node, now, &mut out);
        if let (Some(obs), Some(before)) = (self.observer.as_mut(), before) {
            obs.end(now, before, node, &out);
        }
        self.handle_outputs(sched, id, out);
    }

    fn handle_outputs(&mut self, sched: &mut Scheduler<Event>, id: NodeId, out: Vec<Output>) {
        let now = sched.now();
        let incarnation = self.net.incarnation(id);
        for o in out {
            match o {
                Output::Send { to, msg } => {
                    let delay = self.net.sample_delay(id, to, msg.class());
                    let incarnation = self.net.incarnation(to);
                    sched.schedule(delay, Event::Deliver { from: id, to, incarnation, msg });
                }
                Output::ResetElectionTimer { after } => {
                    if let Some(old) = self.election_timers[id].take() {
                        sched.cancel(old);
                    }
                    self.election_timers[id] = Some(sched.schedule(after, Event::ElectionTimeout { node: id, incarnation }));
                }
                Output::ScheduleHeartbeat { after, term } => {
                    sched.schedule(after, Event::Heartbeat { node: id, incarnation, term });
                }
                Output::Wakeup { after } => {
                    sched.schedule(after, Event::Wakeup { node: id, incarnation });
                }
                Output::WriteDone { req, outcome } => {
                    let result = OpResult {
                        success: outcome == WriteOutcome::Ok,
                        exec: (outcome == WriteOutcome::Ok).then_some(now),
                        values: Vec::new(),
                        not_leader: outcome == WriteOutcome::NotLeader,
                    };
                    sched.schedule(self.cfg.client_latency, Event::Reply { req: req as usize, result });
                }
                Output::ReadDone { req, outcome, .. } => {
                    let not_leader = outcome == ReadOutcome::NotLeader;
                    let result = match outcome {
                        ReadOutcome::Values(values) => OpResult { success: true, exec: Some(now), values, not_leader },
                        _ => OpResult { success: false, exec: None, values: Vec::new(), not_leader },
                    };
                    sched.schedule(self.cfg.client_latency, Event::Reply { req: req as usize, result });
                }
                Output::BecameLeader { term } => {
                    self.last_leader = Some(id);
                    self.mark(now, MarkerKind::LeaderElected { node: id, term });
                }
                Output::LeaseAcquired { term } => {
                    self.mark(now, MarkerKind::LeaseAcquired { node: id, term });
                    if self.t0.is_none() {
                        self.t0 = Some(now);
                    }
                }
                Output::Committed { .. } | Output::SteppedDown { .. } => {}
            }
        }
    }

    fn alive_with(&self, node: NodeId, incarnation: u64) -> bool {
        self.net.is_alive(node) && self.net.incarnation(node) == incarnation
    }

    fn dispatch(&mut self, sched: &mut Scheduler<Event>, op: PlannedOp) {
        let now = sched.now();
        if let Some(next) = self.workload.next_op() {
            let t0 = self.t0.unwrap_or(now);
            sched.schedule_at(t0 + next.at, Event::Dispatch(next));
        }
        let value = match op.op_type {
            OpType::ListAppend => {
                let seq = self.client_seq.entry(op.client).or_insert(0);
                *seq += 1;
                vec![Value::new(op.client, *seq)]
            }
            OpType::Read => Vec::new(),
        };
        let sticky = op.client < self.cfg.workload.sticky_clients;
        let target = if sticky {
            match self.sticky.get(&op.client) {
                Some(&t) => Some(t),
                None => {
                    let t = self.current_leader().or(self.last_leader);
                    if let Some(t) = t {
                        self.sticky.insert(op.client, t);
                    }
                    t
                }
            }
        } else {
            self.current_leader().or(self.last_leader)
        };
        let req = self.requests.len();
        self.requests.push(Request {
            client: op.client,
            entry: ClientLogEntry {
                op_type: op.op_type,
                start_ts: now,
                execution_ts: None,
                end_ts: now,
                key: op.key,
                value: value.clone(),
                success: false,
            },
            done: false,
        });
        let timeout = 2 * self.cfg.mechanism.election_timeout;
        sched.schedule(timeout, Event::Timeout { req });
        if let Some(node) = target {
            let incarnation = self.net.incarnation(node);
            sched.schedule(self.cfg.client_latency, Event::Arrive { req, node, incarnation });
        }
    }

    fn arrive(&mut self, sched: &mut Scheduler<Event>, req: usize, node: NodeId, incarnation: u64) {
        if !self.alive_with(node, incarnation) {
            return;
        }
        let e = self.requests[req].entry.clone();
        let id = req as u64;
        match e.op_type {
            OpType::ListAppend => {
                let value = e.value[0];
                self.step(sched, node, |n, now, out| n.client_write(now, id, e.key, value, out));
            }
            OpType::Read => self.step(sched, node, |n, now, out| n.client_read(now, id, e.key, out)),
        }
    }

    fn complete(&mut self, now: SimTime, req: usize, result: OpResult) {
        let r = &mut self.requests[req];
        if r.done {
            return;
        }
        r.done = true;
        r.entry.end_ts = now;
        r.entry.success = result.success;
        r.entry.execution_ts = result.exec;
        if r.entry.op_type == OpType::Read {
            r.entry.value = result.values;
        }
        if result.not_leader {
            let client = r.client;
            self.sticky.remove(&client);
        }
    }

    fn timeout(&mut self, now: SimTime, req: usize) {
        let r = &mut self.requests[req];
        if !r.done {
            r.done = true;
            r.entry.end_ts = now;
        }
    }

    fn fault(&mut self, sched: &mut Scheduler<Event>, index: usize) {
        let now = sched.now();
        let action = self.cfg.faults.events[index].action.clone();
        match action {
            FaultAction::Crash(sel) => {
                if let Some(id) = self.resolve(&sel) {
                    if self.net.is_alive(id) {
                        self.crash(sched, id);
                    }
                }
            }
            FaultAction::Restart(sel) => {
                if let Some(id) = self.resolve(&sel) {
                    if !self.net.is_alive(id) {
                        self.net.restart(id);
                        self.mark(now, MarkerKind::Restart { node: id });
                        self.step(sched, id, |n, now, out| n.restart(now, out));
                    }
                }
            }
            FaultAction::BreakClock(sel) => {
                if let Some(id) = self.resolve(&sel) {
                    self.nodes[id].clock_mut().break_from(now, 0.0);
                    self.mark(now, MarkerKind::ClockBroken { node: id });
                }
            }
            FaultAction::StepDown => {
                if let Some(id) = self.current_leader() {
                    self.mark(now, MarkerKind::StepDown { node: id });
                    self.step(sched, id, |n, now, out| n.relinquish(now, out));
                }
            }
            FaultAction::LimboBurst(count) => self.limbo_burst(sched, count),
        }
    }

    fn crash(&mut self, sched: &mut Scheduler<Event>, id: NodeId) {
        self.nodes[id].crash();
        self.net.crash(id);
        if let Some(t) = self.election_timers[id].take() {
            sched.cancel(t);
        }
        self.last_crashed = Some(id);
        self.mark(sched.now(), MarkerKind::Crash { node: id });
    }

    /// The leader appends `count` writes, ships them to a single follower,
    /// and crashes before anyone acknowledges them. That follower's log is
    /// the most up to date, so it wins the next election with these entries
    /// in its limbo region.
    fn limbo_burst(&mut self, sched: &mut Scheduler<Event>, count: u64) {
        let now = sched.now();
        let Some(leader) = self.current_leader() else { return };
        let n = self.nodes.len();
        let Some(follower) = (1..n).map(|k| (leader + k) % n).find(|&p| self.net.is_alive(p)) else {
            return;
        };
        let mut commands = Vec::new();
        for _ in 0..count {
            let key: Key = self.keys.sample(&mut self.script_rng);
            self.script_seq += 1;
            let value = Value::new(SCRIPT_CLIENT, self.script_seq);
            commands.push(Command::Append { key, value });
            // Never acknowledged: recorded as a failed write that may or may not take effect.
            self.requests.push(Request {
                client: SCRIPT_CLIENT,
                entry: ClientLogEntry {
                    op_type: OpType::ListAppend,
                    start_ts: now,
                    execution_ts: None,
                    end_ts: now,
                    key,
                    value: vec![value],
                    success: false,
                },
                done: true,
            });
        }
        self.step(sched, leader, |node, now, out| {
            node.stage_entries(now, &commands);
            node.replicate_all_to(now, follower, out);
        });
        self.mark(now, MarkerKind::LimboBurst { node: leader, entries: count });
        self.crash(sched, leader);
    }

    fn partition_start(&mut self, sched: &mut Scheduler<Event>, index: usize) {
        let t0 = self.t0.unwrap_or(SimTime::ZERO);
        let spec = self.cfg.faults.partitions[index].clone();
        let leader = self.current_leader();
        let n = self.nodes.len();
        let concrete = |side: &Side, other: &[NodeId]| -> Vec<NodeId> {
            match side {
                Side::Leader => leader.into_iter().collect(),
                Side::Nodes(ids) => ids.clone(),
                Side::Rest => (0..n).filter(|i| !other.contains(i)).collect(),
            }
        };
        let (a, b) = match (&spec.a, &spec.b) {
            (Side::Rest, other) => {
                let b = concrete(other, &[]);
                (concrete(&Side::Rest, &b), b)
            }
            (first, second) => {
                let a = concrete(first, &[]);
                let b = concrete(second, &a);
                (a, b)
            }
        };
        self.net.add_partition(ActivePartition { a, b, from: sched.now(), until: t0 + spec.until });
        self.mark(sched.now(), MarkerKind::PartitionStart { index });
    }
}

impl crate::kernel::Handler<Event> for Cluster {
    fn handle(&mut self, sched: &mut Scheduler<Event>, event: Event) {
        let now = sched.now();
        match event {
            Event::Start(id) => self.step(sched, id, |n, _, out| n.start(out)),
            Event::Deliver { from, to, incarnation, msg } => {
                if self.net.deliverable(from, to, incarnation, now) {
                    self.step(sched, to, |n, now, out| n.on_message(now, from, msg, out));
                }
            }
            Event::ElectionTimeout { node, incarnation } => {
                if self.alive_with(node, incarnation) {
                    self.election_timers[node] = None;
                    self.step(sched, node, |n, now, out| n.on_election_timeout(now, out));
                }
            }
            Event::Heartbeat { node, incarnation, term } => {
                if self.alive_with(node, incarnation) {
                    self.step(sched, node, |n, now, out| n.on_heartbeat(now, term, out));
                }
            }
            Event::Wakeup { node, incarnation } => {
                if self.alive_with(node, incarnation) {
                    self.step(sched, node, |n, now, out| n.on_wakeup(now, out));
                }
            }
            Event::Dispatch(op) => self.dispatch(sched, op),
            Event::Arrive { req, node, incarnation } => self.arrive(sched, req, node, incarnation),
            Event::Reply { req, result } => self.complete(now, req, result),
            Event::Timeout { req } => self.timeout(now, req),
            Event::Fault(i) => self.fault(sched, i),
            Event::PartitionStart(i) => self.partition_start(sched, i),
            Event::PartitionEnd(i) => self.mark(now, MarkerKind::PartitionEnd { index: i }),
        }
    }
}

/// Builds and runs a cluster for `cfg`.
pub fn run(cfg: SimConfig) -> Result<RunOutput, ConfigError> {
    Ok(Cluster::new(cfg)?.run())
}
