//! Open-loop workload description, operation records, and the history format.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write;
use core::str::FromStr;
use core::time::Duration;

use thiserror::Error;

use crate::raft::Key;
use crate::rng::{stream, DistError, PoissonGap, SeededRng, ZipfKeys};
use crate::time::{DisplayDuration, SimTime};

/// A unique appended value: the issuing client and its per-client sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value {
    pub client: u32,
    pub seq: u32,
}

impl Value {
    pub fn new(client: u32, seq: u32) -> Self {
        Value { client, seq }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.client, self.seq)
    }
}

impl FromStr for Value {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        let (c, q) = s.split_once('-').ok_or(())?;
        Ok(Value { client: c.parse().map_err(|_| ())?, seq: q.parse().map_err(|_| ())? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpType {
    ListAppend,
    Read,
}

impl OpType {
    pub fn name(self) -> &'static str {
        match self {
            OpType::ListAppend => "ListAppend",
            OpType::Read => "Read",
        }
    }
}

/// One client operation as seen by an omniscient observer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientLogEntry {
    pub op_type: OpType,
    pub start_ts: SimTime,
    /// Commit instant for writes, execution instant for reads; unset for failed ops.
    pub execution_ts: Option<SimTime>,
    pub end_ts: SimTime,
    pub key: Key,
    /// The appended value (exactly one) or the list a read returned.
    pub value: Vec<Value>,
    pub success: bool,
}

impl ClientLogEntry {
    pub fn latency(&self) -> Duration {
        self.end_ts - self.start_ts
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("history line {line}: {reason}")]
pub struct HistoryParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub entries: Vec<ClientLogEntry>,
}

pub const HISTORY_HEADER: &str = "# op_type\tstart_ts\texecution_ts\tend_ts\tkey\tvalue\tsuccess";

impl History {
    pub fn new(entries: Vec<ClientLogEntry>) -> Self {
        History { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated, one entry per line, times in integer nanoseconds.
    /// Unset execution times and empty value lists are written as `-`.
    pub fn to_text(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for e in &self.entries {
            let exec = e.execution_ts.map_or_else(|| String::from("-"), |t| t.to_string());
            let values = if e.value.is_empty() {
                String::from("-")
            } else {
                let parts: Vec<String> = e.value.iter().map(|v| v.to_string()).collect();
                parts.join(",")
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.op_type.name(),
                e.start_ts,
                exec,
                e.end_ts,
                e.key,
                values,
                e.success
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<History, HistoryParseError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: &str| HistoryParseError { line, reason: reason.to_string() };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = trimmed.split('\t').collect();
            if f.len() != 7 {
                return Err(err("expected 7 tab-separated fields"));
            }
            let op_type = match f[0] {
                "ListAppend" => OpType::ListAppend,
                "Read" => OpType::Read,
                _ => return Err(err("unknown op type")),
            };
            let time = |s: &str| s.parse::<u64>().map(SimTime::from_nanos).map_err(|_| err("bad timestamp"));
            let start_ts = time(f[1])?;
            let execution_ts = if f[2] == "-" { None } else { Some(time(f[2])?) };
            let end_ts = time(f[3])?;
            let key = f[4].parse().map_err(|_| err("bad key"))?;
            let value = if f[5] == "-" {
                Vec::new()
            } else {
                f[5].split(',')
                    .map(|v| v.parse::<Value>().map_err(|_| err("bad value")))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let success = match f[6] {
                "true" => true,
                "false" => false,
                _ => return Err(err("success must be true or false")),
            };
            if start_ts > end_ts {
                return Err(err("start_ts after end_ts"));
            }
            if op_type == OpType::ListAppend && value.len() != 1 {
                return Err(err("an append carries exactly one value"));
            }
            entries.push(ClientLogEntry { op_type, start_ts, execution_ts, end_ts, key, value, success });
        }
        Ok(History { entries })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arrival {
    Fixed(Duration),
    Poisson(Duration),
}

impl fmt::Display for Arrival {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arrival::Fixed(d) => write!(f, "fixed:{}", DisplayDuration(*d)),
            Arrival::Poisson(d) => write!(f, "poisson:{}", DisplayDuration(*d)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KeyDist {
    Uniform(u64),
    Zipf { a: f64, n: u64 },
}

impl KeyDist {
    pub fn n_keys(&self) -> u64 {
        match self {
            KeyDist::Uniform(n) | KeyDist::Zipf { n, .. } => *n,
        }
    }
}

impl fmt::Display for KeyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyDist::Uniform(n) => write!(f, "uniform:{n}"),
            KeyDist::Zipf { a, n } => write!(f, "zipf:{a}:{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum KeySampler {
    Uniform(u64),
    Zipf(ZipfKeys),
}

impl KeySampler {
    pub fn new(dist: KeyDist) -> Result<Self, DistError> {
        Ok(match dist {
            KeyDist::Uniform(0) => return Err(DistError::BadZipf),
            KeyDist::Uniform(n) => KeySampler::Uniform(n),
            KeyDist::Zipf { a, n } => KeySampler::Zipf(ZipfKeys::new(a, n)?),
        })
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Key {
        match self {
            KeySampler::Uniform(n) => rng.below(*n),
            KeySampler::Zipf(z) => z.sample(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub arrival: Arrival,
    /// Client identities; operation `i` belongs to client `i % clients`.
    pub clients: u32,
    /// Clients `0..sticky_clients` keep their last known leader until told
    /// otherwise; the rest always target the current highest-term leader.
    pub sticky_clients: u32,
    /// Stop after this many operations (0 = no limit).
    pub max_ops: u64,
    pub write_fraction: f64,
    pub keys: KeyDist,
    /// Recorded for completeness; payload size does not affect the simulation.
    pub value_size: u32,
    pub duration: Duration,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            arrival: Arrival::Fixed(Duration::from_micros(300)),
            clients: 1,
            sticky_clients: 0,
            max_ops: 0,
            write_fraction: 1.0 / 3.0,
            keys: KeyDist::Uniform(1000),
            value_size: 1024,
            duration: Duration::from_secs(3),
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err("write fraction must lie in [0, 1]");
        }
        if self.clients == 0 {
            return Err("at least one client is required");
        }
        if self.sticky_clients > self.clients {
            return Err("sticky clients cannot outnumber clients");
        }
        match self.arrival {
            Arrival::Fixed(d) | Arrival::Poisson(d) if d.is_zero() => {
                return Err("arrival gap must be positive")
            }
            _ => {}
        }
        match self.keys {
            KeyDist::Uniform(0) | KeyDist::Zipf { n: 0, .. } => return Err("key space must be non-empty"),
            KeyDist::Zipf { a, .. } if !(a >= 0.0) => return Err("zipf exponent must be >= 0"),
            _ => {}
        }
        Ok(())
    }
}

/// One planned operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannedOp {
    /// Offset from workload start.
    pub at: Duration,
    pub client: u32,
    pub op_type: OpType,
    pub key: Key,
}

/// Draws the open-loop schedule. Dispatch instants depend only on the
/// arrival process, never on completions.
#[derive(Clone, Debug)]
pub struct WorkloadGen {
    spec: WorkloadSpec,
    rng: SeededRng,
    gap: Option<PoissonGap>,
    keys: KeySampler,
    issued: u64,
    next_at: Duration,
}

impl WorkloadGen {
    pub fn new(spec: WorkloadSpec, seed: u64) -> Result<Self, DistError> {
        let gap = match spec.arrival {
            Arrival::Poisson(mean) => Some(PoissonGap::new(mean)?),
            Arrival::Fixed(_) => None,
        };
        let keys = KeySampler::new(spec.keys)?;
        let mut g = WorkloadGen { spec, rng: SeededRng::derive(seed, stream::WORKLOAD), gap, keys, issued: 0, next_at: Duration::ZERO };
        if g.gap.is_some() {
            g.next_at = g.draw_gap();
        }
        Ok(g)
    }

    fn draw_gap(&mut self) -> Duration {
        match (self.spec.arrival, &self.gap) {
            (_, Some(p)) => p.sample(&mut self.rng),
            (Arrival::Fixed(d), None) => d,
            (Arrival::Poisson(_), None) => unreachable!(),
        }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn key_sampler(&self) -> KeySampler {
        self.keys
    }

    pub fn next_op(&mut self) -> Option<PlannedOp> {
        if self.spec.max_ops > 0 && self.issued >= self.spec.max_ops {
            return None;
        }
        if self.next_at >= self.spec.duration {
            return None;
        }
        let at = self.next_at;
        let client = (self.issued % self.spec.clients as u64) as u32;
        let op_type = if self.rng.chance(self.spec.write_fraction) { OpType::ListAppend } else { OpType::Read };
        let key = self.keys.sample(&mut self.rng);
        self.issued += 1;
        self.next_at = at + self.draw_gap();
        Some(PlannedOp { at, client, op_type, key })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(op: OpType, s: u64, x: Option<u64>, e: u64, key: u64, vals: Vec<Value>, ok: bool) -> ClientLogEntry {
        ClientLogEntry {
            op_type: op,
            start_ts: SimTime::from_nanos(s),
            execution_ts: x.map(SimTime::from_nanos),
            end_ts: SimTime::from_nanos(e),
            key,
            value: vals,
            success: ok,
        }
    }

    #[test]
    fn history_round_trip() {
        let h = History::new(vec![
            entry(OpType::ListAppend, 1, Some(5), 9, 3, vec![Value::new(0, 1)], true),
            entry(OpType::Read, 2, Some(6), 7, 3, vec![Value::new(0, 1), Value::new(2, 0)], true),
            entry(OpType::Read, 2, None, 7, 4, vec![], false),
            entry(OpType::ListAppend, 3, None, 11, 4, vec![Value::new(1, 7)], false),
        ]);
        let text = h.to_text();
        assert_eq!(History::parse(&text).unwrap(), h);
        assert!(text.contains("Read\t2\t6\t7\t3\t0-1,2-0\ttrue"));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = History::parse("# header\nRead\t1\t2\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(History::parse("Read\t5\t-\t4\t1\t-\tfalse\n").is_err());
        assert!(History::parse("Write\t1\t-\t4\t1\t-\tfalse\n").is_err());
    }

    #[test]
    fn zero_duration_plans_nothing() {
        let spec = WorkloadSpec { duration: Duration::ZERO, ..WorkloadSpec::default() };
        let mut g = WorkloadGen::new(spec, 1).unwrap();
        assert_eq!(g.next_op(), None);
    }

    #[test]
    fn fixed_arrivals_are_exact() {
        let spec = WorkloadSpec { duration: Duration::from_millis(3), ..WorkloadSpec::default() };
        let mut g = WorkloadGen::new(spec, 1).unwrap();
        let mut times = Vec::new();
        while let Some(op) = g.next_op() {
            times.push(op.at);
        }
        assert_eq!(times.len(), 10);
        for (i, t) in times.iter().enumerate() {
            assert_eq!(*t, Duration::from_micros(300 * i as u64));
        }
    }

    #[test]
    fn max_ops_caps_and_clients_rotate() {
        let spec = WorkloadSpec {
            arrival: Arrival::Poisson(Duration::from_millis(100)),
            clients: 50,
            max_ops: 50,
            duration: Duration::from_secs(1000),
            ..WorkloadSpec::default()
        };
        let mut g = WorkloadGen::new(spec, 2).unwrap();
        let ops: Vec<PlannedOp> = core::iter::from_fn(|| g.next_op()).collect();
        assert_eq!(ops.len(), 50);
        let clients: Vec<u32> = ops.iter().map(|o| o.client).collect();
        assert_eq!(clients, (0..50).collect::<Vec<u32>>());
        assert!(ops.windows(2).all(|w| w[0].at <= w[1].at));
    }
}
