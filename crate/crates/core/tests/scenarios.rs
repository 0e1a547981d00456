//! Scripted protocol runs with hand-computed expectations.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use leaseguard_core::harness::ScriptedCluster;
use leaseguard_core::raft::{ClockMode, Command, Key, ReadOutcome, Role, WriteOutcome};
use leaseguard_core::{MechanismConfig, Node, Value};

fn append(key: Key, seq: u32) -> Command {
    Command::Append { key, value: Value::new(9, seq) }
}

/// Applies `node`'s log entries `1..=upto` one by one.
fn replay(node: &Node, upto: u64) -> BTreeMap<Key, Vec<Value>> {
    let mut kv: BTreeMap<Key, Vec<Value>> = BTreeMap::new();
    for i in 1..=upto {
        if let Command::Append { key, value } = node.entry(i).unwrap().command {
            kv.entry(key).or_default().push(value);
        }
    }
    kv
}

/// Node 0 leads term 1 (its election no-op at 1, writes at 2 and 3) with
/// entries 1..=3 committed everywhere, then ships
/// entries 4..=6 to node 1 alone and crashes before anyone learns they
/// committed. Node 1 wins term 2.
fn limbo_of_three() -> ScriptedCluster {
    let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
    c.elect(0);
    c.advance(Duration::from_millis(1));
    for (i, key) in [21, 22].into_iter().enumerate() {
        c.write(0, key, Value::new(1, i as u32));
        c.deliver_all();
    }
    c.heartbeat(0);
    c.deliver_all();
    c.cut(0, 2);
    c.stage(0, &[append(30, 1), append(31, 2), append(32, 3)]);
    c.replicate_to(0, 1);
    c.deliver_all();
    c.crash(0);
    c.heal();
    c.advance(Duration::from_millis(100));
    c.elect(1);
    c
}

#[test]
fn limbo_region_spans_unknown_suffix() {
    let mut c = limbo_of_three();
    let n = c.node(1);
    assert_eq!(n.role(), Role::Leader);
    assert_eq!(n.commit_index(), 3);
    // Six entries at election, then the new leader's own no-op.
    assert_eq!(n.last_index(), 7);
    assert_eq!(n.entry(7).unwrap().command, Command::Noop);
    assert_eq!(n.limbo(), Some((4, 6)));
    assert_eq!(c.read_now(1, 21), Some(ReadOutcome::Values(vec![Value::new(1, 0)])));
    assert_eq!(c.read_now(1, 31), Some(ReadOutcome::LimboConflict));
    assert!(c.violations().is_empty(), "{:?}", c.violations());
}

#[test]
fn limbo_keys_are_the_suffix_append_keys() {
    let c = limbo_of_three();
    let n = c.node(1);
    let (lo, hi) = n.limbo().unwrap();
    let expected: BTreeSet<Key> = (lo..=hi).filter_map(|i| n.entry(i).unwrap().command.key()).collect();
    assert_eq!(n.limbo_keys(), &expected);
    assert_eq!(expected, BTreeSet::from([30, 31, 32]));
}

#[test]
fn guard_holds_then_commit_jumps_and_applies_in_order() {
    let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
    c.elect(0);
    c.advance(Duration::from_millis(1));
    c.write(0, 5, Value::new(1, 0));
    c.deliver_all();
    c.heartbeat(0);
    c.deliver_all();
    c.cut(0, 2);
    c.stage(0, &[append(5, 2), append(7, 3)]);
    c.replicate_to(0, 1);
    c.deliver_all();
    c.crash(0);
    c.heal();
    c.advance(Duration::from_millis(100));
    c.elect(1);
    // Election no-op at 5.
    assert_eq!(c.node(1).commit_index(), 2);
    assert_eq!(c.node(1).last_index(), 5);
    c.heartbeat(1);
    c.deliver_all();
    assert_eq!(c.node(1).match_index(2), 5);
    // A majority holds index 5, but entries 3 and 4 are younger than the lease.
    assert_eq!(c.node(1).commit_index(), 2);

    c.advance(MechanismConfig::leaseguard().delta);
    c.wakeup(1);
    c.deliver_all();
    let n = c.node(1);
    assert_eq!(n.commit_index(), 5);
    assert_eq!(n.last_applied(), 5);
    assert_eq!(n.kv(), &replay(n, 5));
    assert_eq!(n.kv()[&5], vec![Value::new(1, 0), Value::new(9, 2)]);
    assert_eq!(n.kv()[&7], vec![Value::new(9, 3)]);

    let w = c.write(1, 5, Value::new(2, 0));
    c.deliver_all();
    assert_eq!(c.write_outcome(w), Some(WriteOutcome::Ok));
    assert_eq!(c.node(1).commit_index(), 6);
    assert!(c.violations().is_empty(), "{:?}", c.violations());
}

#[test]
fn follower_learns_commit_from_a_later_message() {
    let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
    c.elect(0);
    c.advance(Duration::from_millis(1));
    c.write(0, 1, Value::new(1, 0));
    c.deliver_all();
    assert_eq!(c.node(0).commit_index(), 2);
    assert_eq!(c.node(1).last_index(), 2);
    assert_eq!(c.node(1).commit_index(), 1);
    c.heartbeat(0);
    c.deliver_all();
    assert_eq!(c.node(1).commit_index(), 2);
    assert_eq!(c.node(2).commit_index(), 2);
}

#[test]
fn conflicting_suffix_is_replaced() {
    let mut c = ScriptedCluster::new(3, MechanismConfig::quorum());
    c.elect(0);
    c.write(0, 1, Value::new(1, 0));
    c.deliver_all();
    c.heartbeat(0);
    c.deliver_all();
    c.isolate(0);
    c.write(0, 2, Value::new(1, 1));
    c.write(0, 2, Value::new(1, 2));
    c.deliver_all();
    assert_eq!(c.node(0).last_index(), 4);

    c.elect(1);
    c.write(1, 3, Value::new(2, 0));
    c.deliver_all();
    c.heal();
    c.heartbeat(1);
    c.deliver_all();
    c.heartbeat(1);
    c.deliver_all();

    let logs: Vec<_> = (0..3).map(|i| c.node(i).log().to_vec()).collect();
    assert_eq!(logs[0].len(), 4);
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[1], logs[2]);
    assert_eq!(logs[0][2].term, 2);
    assert_eq!(logs[0][3].command, Command::Append { key: 3, value: Value::new(2, 0) });
    assert_eq!(c.node(0).role(), Role::Follower);
    assert!(c.violations().is_empty(), "{:?}", c.violations());
}

#[test]
fn vote_granted_despite_unexpired_lease() {
    let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
    c.elect(0);
    c.write(0, 1, Value::new(1, 0));
    c.deliver_all();
    c.heartbeat(0);
    c.deliver_all();
    c.isolate(0);
    c.advance(Duration::from_millis(1));
    c.elect(1);
    assert_eq!(c.node(1).role(), Role::Leader);
    assert_eq!(c.node(1).term(), 2);
}

#[test]
fn lease_boundary_is_exclusive() {
    let delta = MechanismConfig::leaseguard().delta;
    let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
    c.elect(0);
    c.advance(Duration::from_millis(1));
    let written = c.now();
    c.write(0, 1, Value::new(1, 0));
    c.deliver_all();
    assert_eq!(c.node(0).commit_index(), 2);

    c.advance(written + delta - c.now());
    assert_eq!(c.read_now(0, 1), Some(ReadOutcome::Values(vec![Value::new(1, 0)])));
    c.advance(Duration::from_nanos(1));
    assert_eq!(c.read_now(0, 1), Some(ReadOutcome::NoLease));
}

#[test]
fn end_lease_lets_the_successor_start_at_once() {
    let mut c = ScriptedCluster::new(3, MechanismConfig::leaseguard());
    c.elect(0);
    c.advance(Duration::from_millis(1));
    c.write(0, 1, Value::new(1, 0));
    c.deliver_all();
    c.relinquish(0);
    c.deliver_all();
    c.heartbeat(0);
    c.deliver_all();
    assert_ne!(c.node(0).role(), Role::Leader);
    assert_eq!(c.node(1).commit_index(), c.node(0).last_index());

    c.advance(Duration::from_millis(1));
    c.elect(1);
    let w = c.write(1, 2, Value::new(2, 0));
    c.deliver_all();
    assert_eq!(c.write_outcome(w), Some(WriteOutcome::Ok));
    assert_eq!(c.read_now(1, 1), Some(ReadOutcome::Values(vec![Value::new(1, 0)])));
    assert!(c.violations().is_empty(), "{:?}", c.violations());
}

/// Every combination of extreme drift on three nodes: the deposed leader
/// must stop serving reads before the new leader commits anything.
#[test]
fn drift_extremes_never_overlap_old_reads_and_new_commits() {
    let epsilon = Duration::from_millis(10);
    let cfg = MechanismConfig {
        clock_mode: ClockMode::DriftTimer,
        inherited_reads: false,
        ..MechanismConfig::leaseguard()
    };
    let rate = epsilon.as_secs_f64() / cfg.delta.as_secs_f64();
    for mask in 0..8u32 {
        let drift: Vec<f64> = (0..3).map(|i| if mask >> i & 1 == 1 { rate } else { -rate }).collect();
        let mut c = ScriptedCluster::with_clocks(3, cfg.clone(), Duration::ZERO, &drift, epsilon);
        c.elect(0);
        c.advance(Duration::from_millis(1));
        c.write(0, 1, Value::new(1, 0));
        c.deliver_all();
        c.heartbeat(0);
        c.deliver_all();
        c.isolate(0);
        c.advance(Duration::from_millis(1));
        c.elect(1);
        let w = c.write(1, 1, Value::new(2, 0));
        c.deliver_all();

        let mut old_last_served = None;
        let mut new_first_commit = None;
        for _ in 0..1200 {
            c.advance(Duration::from_millis(1));
            if let Some(ReadOutcome::Values(_)) = c.read_now(0, 1) {
                old_last_served = Some(c.now());
            }
            c.wakeup(1);
            c.deliver_all();
            if new_first_commit.is_none() && c.write_outcome(w) == Some(WriteOutcome::Ok) {
                new_first_commit = Some(c.now());
            }
        }
        let commit = new_first_commit.expect("new leader never committed");
        if let Some(served) = old_last_served {
            assert!(served < commit, "drift {drift:?}: old read at {served}, new commit at {commit}");
        }
        assert!(c.violations().is_empty(), "drift {drift:?}: {:?}", c.violations());
    }
}

#[test]
fn slow_timer_undercounts_elapsed_time() {
    let epsilon = Duration::from_millis(10);
    let delta = Duration::from_secs(1);
    let rate = -leaseguard_core::clock::max_drift_rate(epsilon, delta);
    let start = leaseguard_core::SimTime::ZERO;
    let timer = leaseguard_core::clock::LocalClock::new(rate).start_timer(start);
    let now = start + Duration::from_millis(1020);
    assert!(!timer.elapsed_at_least(now, delta + epsilon));
    assert!(timer.elapsed_at_least(now, delta));
}
