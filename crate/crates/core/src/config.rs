//! Run configuration and its flat `key = value` text form.
//!
//! ```text
//! # comment
//! seed = 7
//! mechanism.kind = leaseguard
//! net.latency_mean = 191us
//! net.latency_variance = 391us^2
//! fault.crash = leader@500ms
//! fault.partition = leader|rest@500ms..1500ms
//! workload.keys = zipf:1.5:1000
//! ```
//!
//! Fault times are offsets from the workload start. `fault.*` keys may
//! repeat; every other key may appear once. Unknown keys are errors.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use core::time::Duration;

use thiserror::Error;

use crate::net::{FaultAction, FaultEvent, FaultPlan, LatencyModel, NodeSel, PartitionSpec, Side};
use crate::raft::{ClockMode, MechanismConfig, MechanismKind};
use crate::rng::{stream, SeededRng};
use crate::time::{parse_duration, DisplayDuration};
use crate::workload::{Arrival, KeyDist, WorkloadSpec};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    Repeated { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue { line: usize, key: String, value: String, reason: &'static str },
    #[error("invalid configuration: {0}")]
    Invalid(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftMode {
    /// Local timers run at true speed.
    None,
    /// Each node runs at +epsilon/delta or -epsilon/delta, sign drawn per node.
    Extreme,
    /// Each node's rate is drawn uniformly within the bound.
    Uniform,
}

impl DriftMode {
    fn name(self) -> &'static str {
        match self {
            DriftMode::None => "none",
            DriftMode::Extreme => "extreme",
            DriftMode::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClockSettings {
    pub max_error: Duration,
    /// Drift bound while measuring one lease duration.
    pub epsilon: Duration,
    pub drift: DriftMode,
}

impl Default for ClockSettings {
    fn default() -> Self {
        ClockSettings { max_error: Duration::from_micros(50), epsilon: Duration::from_millis(10), drift: DriftMode::None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub nodes: usize,
    pub mechanism: MechanismConfig,
    pub clock: ClockSettings,
    pub latency: LatencyModel,
    pub client_latency: Duration,
    pub faults: FaultPlan,
    pub workload: WorkloadSpec,
    pub bucket: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mechanism = MechanismConfig { election_jitter: 0.1, ..MechanismConfig::default() };
        SimConfig {
            seed: 1,
            nodes: 3,
            mechanism,
            clock: ClockSettings::default(),
            latency: LatencyModel::new(Duration::from_micros(191), 391e6),
            client_latency: Duration::ZERO,
            faults: FaultPlan::default(),
            workload: WorkloadSpec::default(),
            bucket: Duration::from_millis(10),
        }
    }
}

/// Named mechanism presets: the five availability configurations plus Ongaro leases.
pub fn mechanism_preset(name: &str) -> Option<MechanismConfig> {
    Some(match name {
        "inconsistent" => MechanismConfig::inconsistent(),
        "quorum" => MechanismConfig::quorum(),
        "log-lease" => MechanismConfig::log_lease(),
        "defer-commit" => MechanismConfig::defer_commit(),
        "leaseguard" => MechanismConfig::leaseguard(),
        "ongaro" => MechanismConfig::ongaro(),
        _ => return None,
    })
}

pub const MECHANISM_PRESETS: [&str; 6] =
    ["inconsistent", "quorum", "log-lease", "defer-commit", "leaseguard", "ongaro"];

impl SimConfig {
    /// Availability scenario: 3 nodes, 191us links, an operation every
    /// 300us, leader crash 500ms into the workload.
    pub fn availability(preset: &str, seed: u64) -> Option<Self> {
        let mut mechanism = mechanism_preset(preset)?;
        mechanism.election_jitter = 0.1;
        Some(SimConfig {
            seed,
            mechanism,
            faults: FaultPlan {
                events: alloc::vec![FaultEvent {
                    at: Duration::from_millis(500),
                    action: FaultAction::Crash(NodeSel::Leader),
                }],
                partitions: Vec::new(),
            },
            ..SimConfig::default()
        })
    }

    /// Latency scenario: 50 one-shot clients arriving every 100ms on
    /// average, one-way latency mean `mean` with variance mean (in ms^2).
    pub fn latency(kind: MechanismKind, mean: Duration, seed: u64) -> Self {
        let mechanism = MechanismConfig { kind, ..MechanismConfig::default() };
        let mean_ms = mean.as_nanos() as f64 / 1e6;
        SimConfig {
            seed,
            mechanism,
            latency: LatencyModel::new(mean, mean_ms * 1e12),
            workload: WorkloadSpec {
                arrival: Arrival::Poisson(Duration::from_millis(100)),
                clients: 50,
                max_ops: 50,
                write_fraction: 0.5,
                duration: Duration::from_secs(60),
                ..WorkloadSpec::default()
            },
            bucket: Duration::from_millis(100),
            ..SimConfig::default()
        }
    }

    /// Skewness scenario: the availability setup with Zipf(a) keys and a
    /// scripted crash that leaves `limbo` entries in the next leader's limbo region.
    pub fn skewness(a: f64, limbo: u64, seed: u64) -> Self {
        let mut c = SimConfig::availability("leaseguard", seed).unwrap_or_default();
        c.workload.keys = KeyDist::Zipf { a, n: 1000 };
        c.faults.events = alloc::vec![FaultEvent {
            at: Duration::from_millis(500),
            action: FaultAction::LimboBurst(limbo),
        }];
        c
    }

    /// Random fault plan over a short workload: crashes, restarts,
    /// step-downs, and partitions at random offsets. Clocks stay healthy.
    pub fn chaos(mechanism: MechanismConfig, seed: u64) -> Self {
        let mut rng = SeededRng::derive(seed, stream::PLAN);
        let duration = Duration::from_secs(3);
        let span = duration.as_millis() as u64;
        let mut offsets: Vec<Duration> = (0..8).map(|_| Duration::from_millis(rng.below(span))).collect();
        let mut events = Vec::new();
        for _ in 0..1 + rng.below(4) {
            let action = match rng.below(6) {
                0 | 1 => FaultAction::Crash(NodeSel::Leader),
                2 => FaultAction::Crash(NodeSel::Node(rng.below(3) as usize)),
                3 => FaultAction::Restart(NodeSel::LastCrashed),
                4 => FaultAction::Restart(NodeSel::Node(rng.below(3) as usize)),
                _ => FaultAction::StepDown,
            };
            events.push(FaultEvent { at: offsets.pop().unwrap_or_default(), action });
        }
        let mut partitions = Vec::new();
        for _ in 0..rng.below(3) {
            let (x, y) = (offsets.pop().unwrap_or_default(), offsets.pop().unwrap_or_default());
            let (from, until) = if x < y { (x, y) } else { (y, x + Duration::from_millis(1)) };
            let (a, b) = match rng.below(3) {
                0 => (Side::Leader, Side::Rest),
                1 => (Side::Nodes(alloc::vec![rng.below(3) as usize]), Side::Rest),
                _ => {
                    let i = rng.below(3) as usize;
                    (Side::Nodes(alloc::vec![i]), Side::Nodes(alloc::vec![(i + 1) % 3]))
                }
            };
            partitions.push(PartitionSpec { a, b, from, until });
        }
        SimConfig {
            seed,
            mechanism: MechanismConfig { election_jitter: 0.5, ..mechanism },
            faults: FaultPlan { events, partitions },
            workload: WorkloadSpec {
                arrival: Arrival::Fixed(Duration::from_millis(1)),
                clients: 8,
                keys: KeyDist::Uniform(20),
                duration,
                ..WorkloadSpec::default()
            },
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes == 0 || self.nodes > 64 {
            return Err(ConfigError::Invalid("nodes must be between 1 and 64"));
        }
        self.mechanism.validate().map_err(ConfigError::Invalid)?;
        self.workload.validate().map_err(ConfigError::Invalid)?;
        self.faults.validate(self.nodes).map_err(ConfigError::Invalid)?;
        if self.latency.mean.is_zero() || !(self.latency.variance_ns2 > 0.0) {
            return Err(ConfigError::Invalid("latency mean and variance must be positive"));
        }
        if self.bucket.is_zero() {
            return Err(ConfigError::Invalid("metric bucket must be positive"));
        }
        if self.clock.drift != DriftMode::None && self.clock.epsilon >= self.mechanism.delta {
            return Err(ConfigError::Invalid("drift bound must be smaller than the lease duration"));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<SimConfig, ConfigError> {
        let mut c = SimConfig::default();
        c.faults = FaultPlan::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !key.starts_with("fault.") && !seen.insert(key.to_string()) {
                return Err(ConfigError::Repeated { line, key: key.to_string() });
            }
            c.set(line, key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &'static str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        let dur = || parse_duration(value).ok_or_else(|| bad("expected a duration such as 500ms"));
        let flag = || match value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad("expected true or false")),
        };
        let real = || value.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("expected a number"));
        let int = || value.parse::<u64>().map_err(|_| bad("expected a non-negative integer"));
        let m = &mut self.mechanism;
        match key {
            "seed" => self.seed = int()?,
            "nodes" => self.nodes = int()? as usize,
            "mechanism.kind" => m.kind = MechanismKind::parse(value).ok_or_else(|| bad("unknown mechanism"))?,
            "mechanism.defer_commit" => m.defer_commit = flag()?,
            "mechanism.inherited_reads" => m.inherited_reads = flag()?,
            "mechanism.delta" => m.delta = dur()?,
            "mechanism.election_timeout" => m.election_timeout = dur()?,
            "mechanism.election_jitter" => m.election_jitter = real()?,
            "mechanism.heartbeat_interval" => m.heartbeat_interval = dur()?,
            "mechanism.clock_mode" => {
                m.clock_mode = ClockMode::parse(value).ok_or_else(|| bad("expected interval or drift-timer"))?
            }
            "mechanism.noop_period" => m.noop_period = dur()?,
            "clock.max_error" => self.clock.max_error = dur()?,
            "clock.epsilon" => self.clock.epsilon = dur()?,
            "clock.drift" => {
                self.clock.drift = match value {
                    "none" => DriftMode::None,
                    "extreme" => DriftMode::Extreme,
                    "uniform" => DriftMode::Uniform,
                    _ => return Err(bad("expected none, extreme, or uniform")),
                }
            }
            "net.latency_mean" => self.latency.mean = dur()?,
            "net.latency_variance" => {
                self.latency.variance_ns2 = parse_variance(value).ok_or_else(|| bad("expected e.g. 391us^2"))?
            }
            "net.client_latency" => self.client_latency = dur()?,
            "workload.arrival" => {
                let (kind, gap) = value.split_once(':').ok_or_else(|| bad("expected fixed:<gap> or poisson:<mean>"))?;
                let gap = parse_duration(gap).ok_or_else(|| bad("bad arrival gap"))?;
                self.workload.arrival = match kind {
                    "fixed" => Arrival::Fixed(gap),
                    "poisson" => Arrival::Poisson(gap),
                    _ => return Err(bad("expected fixed:<gap> or poisson:<mean>")),
                };
            }
            "workload.clients" => self.workload.clients = int()? as u32,
            "workload.sticky_clients" => self.workload.sticky_clients = int()? as u32,
            "workload.max_ops" => self.workload.max_ops = int()?,
            "workload.write_fraction" => self.workload.write_fraction = real()?,
            "workload.keys" => self.workload.keys = parse_keys(value).ok_or_else(|| bad("expected uniform:<n> or zipf:<a>:<n>"))?,
            "workload.value_size" => self.workload.value_size = int()? as u32,
            "workload.duration" => self.workload.duration = dur()?,
            "metrics.bucket" => self.bucket = dur()?,
            "fault.crash" | "fault.restart" | "fault.break_clock" => {
                let (sel, at) = value.split_once('@').ok_or_else(|| bad("expected <node>@<time>"))?;
                let at = parse_duration(at).ok_or_else(|| bad("bad fault time"))?;
                let sel = parse_sel(sel).ok_or_else(|| bad("expected leader, crashed, or a node id"))?;
                let action = match key {
                    "fault.crash" => FaultAction::Crash(sel),
                    "fault.restart" => FaultAction::Restart(sel),
                    _ => FaultAction::BreakClock(sel),
                };
                self.faults.events.push(FaultEvent { at, action });
            }
            "fault.stepdown" => {
                self.faults.events.push(FaultEvent { at: dur()?, action: FaultAction::StepDown });
            }
            "fault.limbo_burst" => {
                let (n, at) = value.split_once('@').ok_or_else(|| bad("expected <entries>@<time>"))?;
                let n = n.trim().parse().map_err(|_| bad("bad entry count"))?;
                let at = parse_duration(at).ok_or_else(|| bad("bad fault time"))?;
                self.faults.events.push(FaultEvent { at, action: FaultAction::LimboBurst(n) });
            }
            "fault.partition" => {
                let p = parse_partition(value).ok_or_else(|| bad("expected <side>|<side>@<from>..<until>"))?;
                self.faults.partitions.push(p);
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Every key with its effective value, defaults included.
    pub fn to_text(&self) -> String {
        let m = &self.mechanism;
        let d = |x: Duration| DisplayDuration(x);
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "nodes = {}", self.nodes);
        let _ = writeln!(s, "mechanism.kind = {}", m.kind.name());
        let _ = writeln!(s, "mechanism.defer_commit = {}", m.defer_commit);
        let _ = writeln!(s, "mechanism.inherited_reads = {}", m.inherited_reads);
        let _ = writeln!(s, "mechanism.delta = {}", d(m.delta));
        let _ = writeln!(s, "mechanism.election_timeout = {}", d(m.election_timeout));
        let _ = writeln!(s, "mechanism.election_jitter = {}", m.election_jitter);
        let _ = writeln!(s, "mechanism.heartbeat_interval = {}", d(m.heartbeat_interval));
        let _ = writeln!(s, "mechanism.clock_mode = {}", m.clock_mode.name());
        let _ = writeln!(s, "mechanism.noop_period = {}", d(m.noop_period));
        let _ = writeln!(s, "clock.max_error = {}", d(self.clock.max_error));
        let _ = writeln!(s, "clock.epsilon = {}", d(self.clock.epsilon));
        let _ = writeln!(s, "clock.drift = {}", self.clock.drift.name());
        let _ = writeln!(s, "net.latency_mean = {}", d(self.latency.mean));
        let _ = writeln!(s, "net.latency_variance = {}", format_variance(self.latency.variance_ns2));
        let _ = writeln!(s, "net.client_latency = {}", d(self.client_latency));
        let w = &self.workload;
        let _ = writeln!(s, "workload.arrival = {}", w.arrival);
        let _ = writeln!(s, "workload.clients = {}", w.clients);
        let _ = writeln!(s, "workload.sticky_clients = {}", w.sticky_clients);
        let _ = writeln!(s, "workload.max_ops = {}", w.max_ops);
        let _ = writeln!(s, "workload.write_fraction = {}", w.write_fraction);
        let _ = writeln!(s, "workload.keys = {}", w.keys);
        let _ = writeln!(s, "workload.value_size = {}", w.value_size);
        let _ = writeln!(s, "workload.duration = {}", d(w.duration));
        let _ = writeln!(s, "metrics.bucket = {}", d(self.bucket));
        for e in &self.faults.events {
            let at = d(e.at);
            let _ = match &e.action {
                FaultAction::Crash(sel) => writeln!(s, "fault.crash = {}@{at}", format_sel(sel)),
                FaultAction::Restart(sel) => writeln!(s, "fault.restart = {}@{at}", format_sel(sel)),
                FaultAction::BreakClock(sel) => writeln!(s, "fault.break_clock = {}@{at}", format_sel(sel)),
                FaultAction::StepDown => writeln!(s, "fault.stepdown = {at}"),
                FaultAction::LimboBurst(n) => writeln!(s, "fault.limbo_burst = {n}@{at}"),
            };
        }
        for p in &self.faults.partitions {
            let _ = writeln!(
                s,
                "fault.partition = {}|{}@{}..{}",
                format_side(&p.a),
                format_side(&p.b),
                d(p.from),
                d(p.until)
            );
        }
        s
    }
}

fn parse_sel(s: &str) -> Option<NodeSel> {
    match s.trim() {
        "leader" => Some(NodeSel::Leader),
        "crashed" => Some(NodeSel::LastCrashed),
        n => n.parse().ok().map(NodeSel::Node),
    }
}

fn format_sel(s: &NodeSel) -> String {
    match s {
        NodeSel::Leader => String::from("leader"),
        NodeSel::LastCrashed => String::from("crashed"),
        NodeSel::Node(n) => n.to_string(),
    }
}

fn parse_side(s: &str) -> Option<Side> {
    match s.trim() {
        "leader" => Some(Side::Leader),
        "rest" => Some(Side::Rest),
        list => list.split(',').map(|x| x.trim().parse().ok()).collect::<Option<Vec<_>>>().map(Side::Nodes),
    }
}

fn format_side(s: &Side) -> String {
    match s {
        Side::Leader => String::from("leader"),
        Side::Rest => String::from("rest"),
        Side::Nodes(ids) => {
            let parts: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            parts.join(",")
        }
    }
}

fn parse_partition(s: &str) -> Option<PartitionSpec> {
    let (sides, span) = s.split_once('@')?;
    let (a, b) = sides.split_once('|')?;
    let (from, until) = span.split_once("..")?;
    Some(PartitionSpec { a: parse_side(a)?, b: parse_side(b)?, from: parse_duration(from)?, until: parse_duration(until)? })
}

fn parse_keys(s: &str) -> Option<KeyDist> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["uniform", n] => Some(KeyDist::Uniform(n.trim().parse().ok()?)),
        ["zipf", a, n] => Some(KeyDist::Zipf { a: a.trim().parse().ok()?, n: n.trim().parse().ok()? }),
        _ => None,
    }
}

/// Parses a variance such as `391us^2` into squared nanoseconds.
pub fn parse_variance(s: &str) -> Option<f64> {
    let body = s.trim().strip_suffix("^2")?;
    let split = body.find(|c: char| c.is_ascii_alphabetic())?;
    let (num, unit) = body.split_at(split);
    let scale: f64 = match unit {
        "ns" => 1.0,
        "us" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        _ => return None,
    };
    let v: f64 = num.trim().parse().ok()?;
    (v.is_finite() && v >= 0.0).then_some(v * scale * scale)
}

fn format_variance(ns2: f64) -> String {
    format!("{}us^2", ns2 / 1e6)
}
