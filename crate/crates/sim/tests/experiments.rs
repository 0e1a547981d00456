use std::collections::BTreeSet;
use std::time::Duration;

use leaseguard_core::cluster::SCRIPT_CLIENT;
use leaseguard_core::{ClientLogEntry, History, OpType, SimConfig, SimTime, Value};
use leaseguard_sim::artifacts::run_once;
use leaseguard_sim::experiments::*;

fn zipf_mass(a: f64, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-a)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[test]
fn window_read_success_matches_unblocked_key_mass() {
    for (a, seed) in [(0.0, 1), (1.0, 2), (2.0, 3)] {
        let run = run_once(SimConfig::skewness(a, LIMBO_ENTRIES, seed)).unwrap();
        let limbo: BTreeSet<u64> = run
            .output
            .history
            .entries
            .iter()
            .filter(|e| e.op_type == OpType::ListAppend && e.value[0].client == SCRIPT_CLIENT)
            .map(|e| e.key)
            .collect();
        let mass = zipf_mass(a, 1000);
        let expected = 1.0 - limbo.iter().map(|&k| mass[k as usize]).sum::<f64>();
        let row = skew_row(a, seed).unwrap();
        let sd = (expected * (1.0 - expected) / row.reads as f64).sqrt();
        assert!(row.reads > 500, "a={a}: {} reads", row.reads);
        assert!((row.rate() - expected).abs() < 4.0 * sd + 0.01, "a={a}: {} vs {expected}", row.rate());
    }
}

#[test]
fn uniform_keys_leave_about_nine_in_ten_reads() {
    // Expected blocked mass for 100 uniform draws over 1000 keys: 1 - 0.999^100.
    let expected = 0.999f64.powi(100);
    let totals = skew_totals(&skewness(&[1, 2, 3, 4], &[0.0]).unwrap());
    assert!((totals[0].rate() - expected).abs() < 0.03, "{}", totals[0].rate());
}

#[test]
fn window_stats_count_dispatch_and_reply_separately() {
    let op = |op_type, start: u64, end: u64, ok: bool, client: u32| ClientLogEntry {
        op_type,
        start_ts: SimTime::from_millis(start),
        execution_ts: ok.then(|| SimTime::from_millis(end)),
        end_ts: SimTime::from_millis(end),
        key: 1,
        value: if op_type == OpType::ListAppend { vec![Value::new(client, start as u32)] } else { vec![] },
        success: ok,
    };
    let h = History::new(vec![
        op(OpType::Read, 5, 12, true, 0),
        op(OpType::Read, 12, 13, false, 0),
        op(OpType::ListAppend, 14, 30, true, 0),
        op(OpType::ListAppend, 15, 25, true, 0),
        op(OpType::ListAppend, 16, 16, false, SCRIPT_CLIENT),
    ]);
    let w = WindowStats::over(&h, SimTime::from_millis(10), SimTime::from_millis(20));
    assert_eq!((w.reads, w.reads_ok, w.reads_acked), (1, 0, 1));
    assert_eq!((w.writes, w.writes_ok, w.writes_acked), (2, 2, 0));
    assert_eq!(w.first_write_ack, Some(SimTime::from_millis(25)));
    assert_eq!(w.last_write_ack, Some(SimTime::from_millis(30)));
}

#[test]
fn failover_follows_the_crash() {
    let r = availability("leaseguard", 2).unwrap();
    let f = r.failover;
    let (e, l) = (f.election.unwrap(), f.lease.unwrap());
    assert!(f.fault < e && e <= l);
    // The new leader needs at least an election timeout to notice the crash.
    assert!(e - f.fault >= Duration::from_millis(500));
    assert!(r.run.verdict.linearizable);
}

#[test]
fn par_map_keeps_order() {
    let xs: Vec<u64> = (0..100).collect();
    assert_eq!(par_map(&xs, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
}
