//! Bucketed throughput counts and latency percentiles over a history.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::time::Duration;


use crate::time::{nanos, SimTime};
use crate::workload::{History, OpType};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BucketRow {
    /// Bucket start relative to the series origin.
    pub start: Duration,
    /// Counts by dispatch time.
    pub reads_ok: u64,
    pub reads_failed: u64,
    pub writes_ok: u64,
    pub writes_failed: u64,
    /// Successful operations by completion time.
    pub reads_acked: u64,
    pub writes_acked: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencyRow {
    pub op_type: OpType,
    pub count: u64,
    pub p50: Duration,
    pub p90: Duration,
    pub p99: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricSeries {
    pub bucket: Duration,
    pub buckets: Vec<BucketRow>,
    pub latency: Vec<LatencyRow>,
}

pub const BUCKET_CSV_HEADER: &str =
    "bucket_start_us,reads_ok,reads_failed,writes_ok,writes_failed,reads_acked,writes_acked";
pub const LATENCY_CSV_HEADER: &str = "op_type,count,p50_us,p90_us,p99_us";

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[Duration], p: f64) -> Duration {
    if sorted.is_empty() {
        return Duration::ZERO;
    }
    let n = sorted.len();
    let rank = num_traits::Float::ceil((p / 100.0) * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

impl MetricSeries {
    /// `origin` is usually the workload start; operations before it land in the first bucket.
    pub fn compute(history: &History, origin: SimTime, bucket: Duration) -> Self {
        let width = nanos(bucket).max(1);
        let index = |t: SimTime| ((t - origin).as_nanos() / width as u128) as usize;
        let mut buckets: Vec<BucketRow> = Vec::new();
        let grow = |buckets: &mut Vec<BucketRow>, i: usize| {
            while buckets.len() <= i {
                let start = Duration::from_nanos(width * buckets.len() as u64);
                buckets.push(BucketRow { start, ..BucketRow::default() });
            }
        };
        for e in &history.entries {
            let i = index(e.start_ts);
            grow(&mut buckets, i);
            let row = &mut buckets[i];
            match (e.op_type, e.success) {
                (OpType::Read, true) => row.reads_ok += 1,
                (OpType::Read, false) => row.reads_failed += 1,
                (OpType::ListAppend, true) => row.writes_ok += 1,
                (OpType::ListAppend, false) => row.writes_failed += 1,
            }
            if e.success {
                let j = index(e.end_ts);
                grow(&mut buckets, j);
                match e.op_type {
                    OpType::Read => buckets[j].reads_acked += 1,
                    OpType::ListAppend => buckets[j].writes_acked += 1,
                }
            }
        }
        let latency = [OpType::Read, OpType::ListAppend]
            .into_iter()
            .map(|op| {
                let mut xs: Vec<Duration> = history
                    .entries
                    .iter()
                    .filter(|e| e.op_type == op && e.success)
                    .map(|e| e.latency())
                    .collect();
                xs.sort_unstable();
                LatencyRow {
                    op_type: op,
                    count: xs.len() as u64,
                    p50: percentile(&xs, 50.0),
                    p90: percentile(&xs, 90.0),
                    p99: percentile(&xs, 99.0),
                }
            })
            .collect();
        MetricSeries { bucket, buckets, latency }
    }

    pub fn latency_of(&self, op: OpType) -> Option<&LatencyRow> {
        self.latency.iter().find(|r| r.op_type == op)
    }

    pub fn bucket_csv(&self) -> String {
        let mut s = String::from(BUCKET_CSV_HEADER);
        s.push('\n');
        for r in &self.buckets {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.start.as_micros(),
                r.reads_ok,
                r.reads_failed,
                r.writes_ok,
                r.writes_failed,
                r.reads_acked,
                r.writes_acked
            );
        }
        s
    }

    pub fn latency_csv(&self) -> String {
        let us = |d: Duration| nanos(d) as f64 / 1e3;
        let mut s = String::from(LATENCY_CSV_HEADER);
        s.push('\n');
        for r in &self.latency {
            let _ = writeln!(
                s,
                "{},{},{:.3},{:.3},{:.3}",
                r.op_type.name(),
                r.count,
                us(r.p50),
                us(r.p90),
                us(r.p99)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{ClientLogEntry, Value};
    use alloc::vec;

    fn op(op_type: OpType, start_us: u64, end_us: u64, ok: bool) -> ClientLogEntry {
        ClientLogEntry {
            op_type,
            start_ts: SimTime::from_micros(start_us),
            execution_ts: ok.then(|| SimTime::from_micros(end_us)),
            end_ts: SimTime::from_micros(end_us),
            key: 0,
            value: if op_type == OpType::ListAppend { vec![Value::new(0, start_us as u32)] } else { vec![] },
            success: ok,
        }
    }

    #[test]
    fn nearest_rank() {
        let xs: Vec<Duration> = (1..=10).map(Duration::from_millis).collect();
        assert_eq!(percentile(&xs, 50.0), Duration::from_millis(5));
        assert_eq!(percentile(&xs, 90.0), Duration::from_millis(9));
        assert_eq!(percentile(&xs, 99.0), Duration::from_millis(10));
        assert_eq!(percentile(&[], 90.0), Duration::ZERO);
    }

    #[test]
    fn buckets_conserve_counts_and_csv_is_stable() {
        let h = History::new(vec![
            op(OpType::Read, 0, 0, true),
            op(OpType::Read, 5, 6, false),
            op(OpType::ListAppend, 12, 25, true),
            op(OpType::ListAppend, 19, 30, false),
        ]);
        let m = MetricSeries::compute(&h, SimTime::ZERO, Duration::from_micros(10));
        let total: u64 = m.buckets.iter().map(|b| b.reads_ok + b.reads_failed + b.writes_ok + b.writes_failed).sum();
        assert_eq!(total, 4);
        assert_eq!(
            m.bucket_csv(),
            "bucket_start_us,reads_ok,reads_failed,writes_ok,writes_failed,reads_acked,writes_acked\n\
             0,1,1,0,0,1,0\n\
             10,0,0,1,1,0,0\n\
             20,0,0,0,0,0,1\n"
        );
        assert_eq!(
            m.latency_csv(),
            "op_type,count,p50_us,p90_us,p99_us\nRead,1,0.000,0.000,0.000\nListAppend,1,13.000,13.000,13.000\n"
        );
    }
}
