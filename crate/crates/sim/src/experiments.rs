//! The three experiments: read/write latency against network latency,
//! availability across a leader crash, and read availability against key
//! skew while the new leader waits out the old lease.

use std::fmt::Write;
use std::time::Duration;

use leaseguard_core::cluster::{MarkerKind, RunOutput, SCRIPT_CLIENT};
use leaseguard_core::raft::MechanismKind;
use leaseguard_core::{ClientLogEntry, History, OpType, SimConfig, SimTime};
use rayon::prelude::*;

use crate::artifacts::{run_once, RunReport};
use crate::SimError;

/// Applies `f` to every item in parallel, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

// ---- latency ----

pub const LATENCY_KINDS: [MechanismKind; 3] = [MechanismKind::Inconsistent, MechanismKind::Quorum, MechanismKind::LeaseGuard];

pub fn latency_means() -> Vec<Duration> {
    (1..=10).map(Duration::from_millis).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyCell {
    pub kind: MechanismKind,
    pub mean: Duration,
    pub reads: u64,
    pub writes: u64,
    pub read_p90: Duration,
    pub write_p90: Duration,
}

pub const LATENCY_TABLE_HEADER: &str = "mechanism,mean_ms,reads,writes,read_p90_us,write_p90_us";

pub fn latency_cell(kind: MechanismKind, mean: Duration, seed: u64) -> Result<LatencyCell, SimError> {
    let report = run_once(SimConfig::latency(kind, mean, seed))?;
    let row = |op| report.metrics.latency_of(op).copied();
    let (r, w) = (row(OpType::Read), row(OpType::ListAppend));
    Ok(LatencyCell {
        kind,
        mean,
        reads: r.map_or(0, |x| x.count),
        writes: w.map_or(0, |x| x.count),
        read_p90: r.map_or(Duration::ZERO, |x| x.p90),
        write_p90: w.map_or(Duration::ZERO, |x| x.p90),
    })
}

pub fn latency_sweep(seed: u64, means: &[Duration]) -> Result<Vec<LatencyCell>, SimError> {
    let jobs: Vec<(MechanismKind, Duration)> =
        means.iter().flat_map(|&m| LATENCY_KINDS.iter().map(move |&k| (k, m))).collect();
    par_map(&jobs, |&(kind, mean)| latency_cell(kind, mean, seed)).into_iter().collect()
}

pub fn latency_table(cells: &[LatencyCell]) -> String {
    let us = |d: Duration| d.as_nanos() as f64 / 1e3;
    let mut s = format!("{LATENCY_TABLE_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3},{:.3}",
            c.kind.name(),
            c.mean.as_millis(),
            c.reads,
            c.writes,
            us(c.read_p90),
            us(c.write_p90)
        );
    }
    s
}

// ---- failover windows ----

/// Timeline of the first leader change after the injected fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Failover {
    pub fault: SimTime,
    pub election: Option<SimTime>,
    /// First commit of the new leader's own term.
    pub lease: Option<SimTime>,
}

impl Failover {
    pub fn find(out: &RunOutput) -> Option<Failover> {
        let fault = out
            .markers
            .iter()
            .find(|m| matches!(m.kind, MarkerKind::Crash { .. } | MarkerKind::LimboBurst { .. }))?
            .at;
        let mut election = None;
        let mut lease = None;
        for m in out.markers.iter().filter(|m| m.at >= fault) {
            match m.kind {
                MarkerKind::LeaderElected { term, .. } if election.is_none() => election = Some((m.at, term)),
                MarkerKind::LeaseAcquired { term, .. } if election.is_some_and(|(_, t)| t == term) => {
                    lease = Some(m.at);
                    break;
                }
                _ => {}
            }
        }
        Some(Failover { fault, election: election.map(|(t, _)| t), lease })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WindowStats {
    /// Operations dispatched inside the window.
    pub reads: u64,
    pub reads_ok: u64,
    pub writes: u64,
    pub writes_ok: u64,
    /// Successful operations whose reply arrived inside the window.
    pub reads_acked: u64,
    pub writes_acked: u64,
    /// Reply times of successful writes dispatched inside the window.
    pub first_write_ack: Option<SimTime>,
    pub last_write_ack: Option<SimTime>,
}

impl WindowStats {
    /// Workload operations only; entries injected by fault scripts are skipped.
    pub fn over(history: &History, from: SimTime, until: SimTime) -> Self {
        let mut w = WindowStats::default();
        let inside = |t: SimTime| from <= t && t < until;
        let scripted = |e: &&ClientLogEntry| e.op_type == OpType::ListAppend && e.value[0].client == SCRIPT_CLIENT;
        for e in history.entries.iter().filter(|e| !scripted(e)) {
            if inside(e.start_ts) {
                match e.op_type {
                    OpType::Read => {
                        w.reads += 1;
                        w.reads_ok += e.success as u64;
                    }
                    OpType::ListAppend => {
                        w.writes += 1;
                        w.writes_ok += e.success as u64;
                        if e.success {
                            w.first_write_ack = Some(w.first_write_ack.map_or(e.end_ts, |t| t.min(e.end_ts)));
                            w.last_write_ack = Some(w.last_write_ack.map_or(e.end_ts, |t| t.max(e.end_ts)));
                        }
                    }
                }
            }
            if e.success && inside(e.end_ts) {
                match e.op_type {
                    OpType::Read => w.reads_acked += 1,
                    OpType::ListAppend => w.writes_acked += 1,
                }
            }
        }
        w
    }
}

pub struct AvailabilityReport {
    pub preset: String,
    pub run: RunReport,
    pub failover: Failover,
    /// Operations between the election and the new leader's first own-term commit.
    pub window: WindowStats,
    /// Reply time of the first successful read dispatched after the fault.
    pub read_resumed: Option<SimTime>,
}

pub fn availability(preset: &str, seed: u64) -> Result<AvailabilityReport, SimError> {
    let config = SimConfig::availability(preset, seed).ok_or(leaseguard_core::ConfigError::Invalid("unknown mechanism"))?;
    availability_with(preset, config)
}

pub fn availability_with(preset: &str, config: SimConfig) -> Result<AvailabilityReport, SimError> {
    let run = run_once(config)?;
    let failover = Failover::find(&run.output).unwrap_or(Failover { fault: run.output.end, election: None, lease: None });
    let window = match (failover.election, failover.lease) {
        (Some(a), Some(b)) => WindowStats::over(&run.output.history, a, b),
        _ => WindowStats::default(),
    };
    let read_resumed = run
        .output
        .history
        .entries
        .iter()
        .filter(|e| e.op_type == OpType::Read && e.success && e.start_ts >= failover.fault)
        .map(|e| e.end_ts)
        .min();
    Ok(AvailabilityReport { preset: preset.to_string(), run, failover, window, read_resumed })
}

impl AvailabilityReport {
    pub fn summary(&self) -> String {
        let show = |t: Option<SimTime>| t.map_or_else(|| "-".to_string(), |t| t.to_string());
        let w = &self.window;
        format!(
            "mechanism,fault_ns,election_ns,lease_ns,read_resumed_ns,window_reads,window_reads_ok,window_writes,window_writes_ok,window_reads_acked,window_writes_acked\n\
             {},{},{},{},{},{},{},{},{},{},{}\n",
            self.preset,
            self.failover.fault,
            show(self.failover.election),
            show(self.failover.lease),
            show(self.read_resumed),
            w.reads,
            w.reads_ok,
            w.writes,
            w.writes_ok,
            w.reads_acked,
            w.writes_acked
        )
    }
}

// ---- skewness ----

pub const SKEW_EXPONENTS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const LIMBO_ENTRIES: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkewRow {
    pub a: f64,
    pub seed: u64,
    pub reads: u64,
    pub reads_ok: u64,
}

impl SkewRow {
    pub fn rate(&self) -> f64 {
        if self.reads == 0 {
            return 0.0;
        }
        self.reads_ok as f64 / self.reads as f64
    }
}

pub const SKEW_TABLE_HEADER: &str = "a,seed,reads_in_window,reads_ok,success_rate";

/// Reads dispatched while the new leader waits out the inherited lease.
pub fn skew_row(a: f64, seed: u64) -> Result<SkewRow, SimError> {
    let run = run_once(SimConfig::skewness(a, LIMBO_ENTRIES, seed))?;
    let f = Failover::find(&run.output);
    let w = match f.and_then(|f| Some((f.election?, f.lease?))) {
        Some((from, until)) => WindowStats::over(&run.output.history, from, until),
        None => WindowStats::default(),
    };
    Ok(SkewRow { a, seed, reads: w.reads, reads_ok: w.reads_ok })
}

pub fn skewness(seeds: &[u64], exponents: &[f64]) -> Result<Vec<SkewRow>, SimError> {
    let jobs: Vec<(f64, u64)> = exponents.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    par_map(&jobs, |&(a, s)| skew_row(a, s)).into_iter().collect()
}

/// Sums rows per exponent, in the order exponents first appear.
pub fn skew_totals(rows: &[SkewRow]) -> Vec<SkewRow> {
    let mut out: Vec<SkewRow> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|t| t.a == r.a) {
            Some(t) => {
                t.reads += r.reads;
                t.reads_ok += r.reads_ok;
            }
            None => out.push(SkewRow { seed: 0, ..*r }),
        }
    }
    out
}

pub fn skew_table(rows: &[SkewRow]) -> String {
    let mut s = format!("{SKEW_TABLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{:.4}", r.a, r.seed, r.reads, r.reads_ok, r.rate());
    }
    s
}
