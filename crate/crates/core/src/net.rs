//! Message transport: per-link latency draws, liveness, and partitions.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use crate::raft::NodeId;
use crate::rng::{stream, DistError, LognormalDelay, SeededRng};
use crate::time::SimTime;

/// Traffic classes get independent latency streams so that, for a fixed
/// seed, adding read-check traffic does not change replication delays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkClass {
    Replication,
    Vote,
    ReadCheck,
}

impl LinkClass {
    fn id(self) -> u64 {
        match self {
            LinkClass::Replication => 0,
            LinkClass::Vote => 1,
            LinkClass::ReadCheck => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyModel {
    pub mean: Duration,
    /// Variance of the one-way delay in squared nanoseconds.
    pub variance_ns2: f64,
}

impl LatencyModel {
    pub fn new(mean: Duration, variance_ns2: f64) -> Self {
        LatencyModel { mean, variance_ns2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeSel {
    /// Whichever node leads (highest term) when the fault fires.
    Leader,
    /// The node crashed most recently.
    LastCrashed,
    Node(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Side {
    Leader,
    /// Every node not on the other side.
    Rest,
    Nodes(Vec<NodeId>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    pub a: Side,
    pub b: Side,
    pub from: Duration,
    pub until: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FaultAction {
    Crash(NodeSel),
    Restart(NodeSel),
    BreakClock(NodeSel),
    /// The leader commits an end-lease entry and steps down.
    StepDown,
    /// The leader stages this many unacknowledged entries, ships them to one
    /// follower only, then crashes; the follower inherits them as limbo entries.
    LimboBurst(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultEvent {
    /// Offset from workload start.
    pub at: Duration,
    pub action: FaultAction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub events: Vec<FaultEvent>,
    pub partitions: Vec<PartitionSpec>,
}

impl FaultPlan {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.partitions.is_empty()
    }

    pub fn validate(&self, n_nodes: usize) -> Result<(), &'static str> {
        let check_sel = |s: &NodeSel| match s {
            NodeSel::Node(id) if *id >= n_nodes => Err("fault names a node outside the cluster"),
            _ => Ok(()),
        };
        for e in &self.events {
            match &e.action {
                FaultAction::Crash(s) | FaultAction::Restart(s) | FaultAction::BreakClock(s) => {
                    check_sel(s)?
                }
                FaultAction::LimboBurst(0) => return Err("limbo burst needs at least one entry"),
                _ => {}
            }
        }
        for p in &self.partitions {
            if p.from >= p.until {
                return Err("partition interval must satisfy from < until");
            }
            if matches!((&p.a, &p.b), (Side::Rest, Side::Rest)) {
                return Err("partition sides cannot both be `rest`");
            }
            for side in [&p.a, &p.b] {
                if let Side::Nodes(ids) = side {
                    if ids.is_empty() || ids.iter().any(|&i| i >= n_nodes) {
                        return Err("partition side names no node or a node outside the cluster");
                    }
                }
            }
        }
        Ok(())
    }
}

/// A partition resolved to concrete node sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivePartition {
    pub a: Vec<NodeId>,
    pub b: Vec<NodeId>,
    pub from: SimTime,
    pub until: SimTime,
}

impl ActivePartition {
    pub fn separates(&self, x: NodeId, y: NodeId, at: SimTime) -> bool {
        if at < self.from || at >= self.until {
            return false;
        }
        (self.a.contains(&x) && self.b.contains(&y)) || (self.b.contains(&x) && self.a.contains(&y))
    }
}

#[derive(Debug)]
pub struct Network {
    seed: u64,
    latency: LognormalDelay,
    links: BTreeMap<(NodeId, NodeId, LinkClass), SeededRng>,
    alive: Vec<bool>,
    incarnation: Vec<u64>,
    partitions: Vec<ActivePartition>,
}

impl Network {
    pub fn new(seed: u64, n_nodes: usize, model: LatencyModel) -> Result<Self, DistError> {
        Ok(Network {
            seed,
            latency: LognormalDelay::new(model.mean, model.variance_ns2)?,
            links: BTreeMap::new(),
            alive: vec![true; n_nodes],
            incarnation: vec![0; n_nodes],
            partitions: Vec::new(),
        })
    }

    pub fn sample_delay(&mut self, from: NodeId, to: NodeId, class: LinkClass) -> Duration {
        let seed = self.seed;
        let rng = self.links.entry((from, to, class)).or_insert_with(|| {
            let id = stream::LINK | ((from as u64) << 24) | ((to as u64) << 8) | class.id();
            SeededRng::derive(seed, id)
        });
        self.latency.sample(rng)
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.alive[node]
    }

    pub fn incarnation(&self, node: NodeId) -> u64 {
        self.incarnation[node]
    }

    pub fn crash(&mut self, node: NodeId) {
        self.alive[node] = false;
        self.incarnation[node] += 1;
    }

    pub fn restart(&mut self, node: NodeId) {
        self.alive[node] = true;
        self.incarnation[node] += 1;
    }

    pub fn add_partition(&mut self, p: ActivePartition) {
        self.partitions.push(p);
    }

    pub fn partitioned(&self, x: NodeId, y: NodeId, at: SimTime) -> bool {
        self.partitions.iter().any(|p| p.separates(x, y, at))
    }

    /// Whether a message addressed to `to` while it had incarnation
    /// `incarnation` should be handed over at `at`.
    pub fn deliverable(&self, from: NodeId, to: NodeId, incarnation: u64, at: SimTime) -> bool {
        self.alive[to] && self.incarnation[to] == incarnation && !self.partitioned(from, to, at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::new(5, 3, LatencyModel::new(Duration::from_micros(191), 391e6)).unwrap()
    }

    #[test]
    fn delays_are_positive_and_reproducible() {
        let mut a = net();
        let mut b = net();
        for _ in 0..100 {
            let d = a.sample_delay(0, 1, LinkClass::Replication);
            assert!(d > Duration::ZERO);
            assert_eq!(d, b.sample_delay(0, 1, LinkClass::Replication));
        }
    }

    #[test]
    fn classes_do_not_share_streams() {
        let mut a = net();
        let mut b = net();
        for _ in 0..50 {
            b.sample_delay(0, 1, LinkClass::ReadCheck);
        }
        for _ in 0..50 {
            assert_eq!(
                a.sample_delay(0, 1, LinkClass::Replication),
                b.sample_delay(0, 1, LinkClass::Replication)
            );
        }
    }

    #[test]
    fn crashed_recipient_drops() {
        let mut n = net();
        let inc = n.incarnation(1);
        n.crash(1);
        assert!(!n.deliverable(0, 1, inc, SimTime::ZERO));
        n.restart(1);
        // Messages sent before the crash stay lost after the restart.
        assert!(!n.deliverable(0, 1, inc, SimTime::ZERO));
        assert!(n.deliverable(0, 1, n.incarnation(1), SimTime::ZERO));
    }

    #[test]
    fn partition_drops_across_sides_only() {
        let mut n = net();
        n.add_partition(ActivePartition {
            a: vec![0],
            b: vec![1, 2],
            from: SimTime::from_millis(10),
            until: SimTime::from_millis(20),
        });
        let t = SimTime::from_millis(15);
        assert!(!n.deliverable(0, 1, 0, t));
        assert!(!n.deliverable(2, 0, 0, t));
        assert!(n.deliverable(1, 2, 0, t));
        assert!(n.deliverable(0, 1, 0, SimTime::from_millis(20)));
    }

    #[test]
    fn validation() {
        let mut p = FaultPlan::default();
        assert!(p.validate(3).is_ok());
        p.partitions.push(PartitionSpec {
            a: Side::Leader,
            b: Side::Rest,
            from: Duration::from_millis(5),
            until: Duration::from_millis(5),
        });
        assert!(p.validate(3).is_err());
        p.partitions[0].until = Duration::from_millis(6);
        assert!(p.validate(3).is_ok());
        p.events.push(FaultEvent { at: Duration::ZERO, action: FaultAction::Crash(NodeSel::Node(3)) });
        assert!(p.validate(3).is_err());
    }
}
