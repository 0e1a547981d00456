//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use leaseguard_core::checker::random_history;
use leaseguard_core::cluster;
use leaseguard_core::config::{mechanism_preset, ClockSettings, DriftMode, MECHANISM_PRESETS};
use leaseguard_core::harness::read_your_writes;
use leaseguard_core::raft::{ClockMode, MechanismKind};
use leaseguard_core::rng::SeededRng;
use leaseguard_core::{brute_force_check, check, MechanismConfig, SimConfig};
use leaseguard_sim::artifacts::run_once;
use leaseguard_sim::experiments::*;

const INVARIANT_RUNS: u64 = 200;
const POSITIVE_SEEDS: u64 = 100;
const NEGATIVE_SEEDS: u64 = 50;
const ORACLE_HISTORIES: u64 = 1000;
const ORACLE_MAX_OPS: usize = 8;
const LATENCY_SEED: u64 = 1;
const AVAILABILITY_SEED: u64 = 1;
const SKEW_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Lower and upper bounds on p90 round-trip operations, as multiples of the one-way mean.
const ROUND_TRIP_BAND: (f64, f64) = (1.5, 3.0);
const LOCAL_READ_FRACTION: f64 = 0.1;
const WINDOW_SUCCESS: f64 = 0.95;
const BURST_SLACK: Duration = Duration::from_millis(50);
const RESUME_SLACK: Duration = Duration::from_millis(50);
const SKEW_FLOOR_AT_ZERO: f64 = 0.85;
const SKEW_RATIO_AT_TWO: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn c1_determinism() -> Outcome {
    let mut configs: Vec<SimConfig> = MECHANISM_PRESETS.iter().map(|p| SimConfig::availability(p, 7).unwrap()).collect();
    configs.push(SimConfig::latency(MechanismKind::Quorum, Duration::from_millis(5), 7));
    configs.push(SimConfig::latency(MechanismKind::LeaseGuard, Duration::from_millis(2), 7));
    configs.push(SimConfig::skewness(1.0, 100, 7));
    configs.push(SimConfig::chaos(MechanismConfig::leaseguard(), 7));
    let files = |c: &SimConfig| run_once(c.clone()).map(|r| r.files()).unwrap();
    let diverged: Vec<usize> = par_map(&configs, |c| files(c) != files(c))
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| d.then_some(i))
        .collect();
    outcome(diverged.is_empty(), format!("{} configs run twice, {} diverged {:?}", configs.len(), diverged.len(), diverged))
}

fn chaos_failures(configs: Vec<SimConfig>) -> Vec<String> {
    par_map(&configs, |c| {
        let out = cluster::run(c.clone()).unwrap();
        out.violations.first().map(|v| format!("seed {}: {v}", c.seed))
    })
    .into_iter()
    .flatten()
    .collect()
}

fn c2_invariants() -> Outcome {
    let configs: Vec<SimConfig> = (0..INVARIANT_RUNS)
        .map(|seed| {
            let preset = MECHANISM_PRESETS[(seed % MECHANISM_PRESETS.len() as u64) as usize];
            SimConfig::chaos(mechanism_preset(preset).unwrap(), seed)
        })
        .collect();
    let bad = chaos_failures(configs);
    outcome(bad.is_empty(), format!("{INVARIANT_RUNS} random crash/partition runs, {} with violations {:?}", bad.len(), bad.first()))
}

fn c3_positive() -> Outcome {
    let jobs: Vec<(&str, u64)> = ["quorum", "log-lease", "defer-commit", "leaseguard", "ongaro"]
        .iter()
        .flat_map(|&p| (0..POSITIVE_SEEDS).map(move |s| (p, s)))
        .collect();
    let bad: Vec<String> = par_map(&jobs, |&(p, s)| {
        let r = run_once(SimConfig::availability(p, s).unwrap()).unwrap();
        (!r.verdict.linearizable).then(|| format!("{p} seed {s}"))
    })
    .into_iter()
    .flatten()
    .collect();
    outcome(bad.is_empty(), format!("{} failover histories checked, {} not linearizable {:?}", jobs.len(), bad.len(), bad.first()))
}

/// Half the clients stay with whichever leader they first found; the old
/// leader is cut off from the rest of the cluster for 2.7s.
fn stale_read_config(mechanism: &str, broken_clock: bool, seed: u64) -> SimConfig {
    let mut text = format!(
        "seed = {seed}\nmechanism.kind = {}\nmechanism.election_jitter = 0.1\nworkload.clients = 4\n\
         workload.sticky_clients = 2\nworkload.keys = uniform:10\nworkload.duration = 3500ms\n\
         fault.partition = leader|rest@300ms..3000ms\n",
        if mechanism == "inconsistent" { "inconsistent" } else { "leaseguard" }
    );
    if broken_clock {
        text.push_str("fault.break_clock = leader@200ms\n");
    }
    SimConfig::parse(&text).unwrap()
}

fn non_linearizable_seeds(mechanism: &str, broken_clock: bool) -> usize {
    let seeds: Vec<u64> = (0..NEGATIVE_SEEDS).collect();
    par_map(&seeds, |&s| !run_once(stale_read_config(mechanism, broken_clock, s)).unwrap().verdict.linearizable)
        .into_iter()
        .filter(|&b| b)
        .count()
}

fn c4_negative() -> Outcome {
    let stale = non_linearizable_seeds("inconsistent", false);
    let broken = non_linearizable_seeds("leaseguard", true);
    let healthy = non_linearizable_seeds("leaseguard", false);
    outcome(
        stale >= 1 && broken >= 1 && healthy == 0,
        format!(
            "non-linearizable seeds of {NEGATIVE_SEEDS}: inconsistent+partition {stale}, leaseguard+broken clock {broken}, leaseguard healthy {healthy}"
        ),
    )
}

fn c5_oracle() -> Outcome {
    let mut disagree = Vec::new();
    let mut verdicts = [0u64; 2];
    for seed in 0..ORACLE_HISTORIES {
        let h = random_history(&mut SeededRng::new(seed), ORACLE_MAX_OPS);
        let fast = check(&h).unwrap().linearizable;
        verdicts[fast as usize] += 1;
        if fast != brute_force_check(&h).unwrap().linearizable {
            disagree.push(seed);
        }
    }
    outcome(
        disagree.is_empty(),
        format!(
            "{ORACLE_HISTORIES} histories ({} linearizable, {} not), {} disagreements {:?}",
            verdicts[1],
            verdicts[0],
            disagree.len(),
            disagree.first()
        ),
    )
}

fn c6_latency() -> Outcome {
    let means = [1, 5, 10].map(Duration::from_millis);
    let cells = latency_sweep(LATENCY_SEED, &means).unwrap();
    let mut problems = Vec::new();
    for &l in &means {
        let cell = |k| cells.iter().find(|c| c.kind == k && c.mean == l).unwrap();
        let band = |d: Duration| {
            let x = d.as_secs_f64() / l.as_secs_f64();
            ROUND_TRIP_BAND.0 <= x && x <= ROUND_TRIP_BAND.1
        };
        for k in [MechanismKind::LeaseGuard, MechanismKind::Inconsistent] {
            if cell(k).read_p90.as_secs_f64() >= LOCAL_READ_FRACTION * l.as_secs_f64() {
                problems.push(format!("{} read p90 {:?} at {l:?}", k.name(), cell(k).read_p90));
            }
        }
        if !band(cell(MechanismKind::Quorum).read_p90) {
            problems.push(format!("quorum read p90 {:?} at {l:?}", cell(MechanismKind::Quorum).read_p90));
        }
        for k in LATENCY_KINDS {
            if !band(cell(k).write_p90) {
                problems.push(format!("{} write p90 {:?} at {l:?}", k.name(), cell(k).write_p90));
            }
        }
        if cell(MechanismKind::Quorum).write_p90 < cell(MechanismKind::LeaseGuard).write_p90 {
            problems.push(format!("quorum writes faster than leaseguard at {l:?}"));
        }
    }
    let ten = |k| cells.iter().find(|c| c.kind == k && c.mean == means[2]).unwrap().clone();
    outcome(
        problems.is_empty(),
        format!(
            "at 10ms: quorum read/write p90 {:?}/{:?}, leaseguard {:?}/{:?}; {} problems {:?}",
            ten(MechanismKind::Quorum).read_p90,
            ten(MechanismKind::Quorum).write_p90,
            ten(MechanismKind::LeaseGuard).read_p90,
            ten(MechanismKind::LeaseGuard).write_p90,
            problems.len(),
            problems.first()
        ),
    )
}

fn c7_availability() -> Outcome {
    let r = |p| availability(p, AVAILABILITY_SEED).unwrap();
    let mut problems = Vec::new();

    let lease = r("log-lease");
    let w = lease.window;
    if lease.failover.lease.is_none() || w.reads_acked + w.writes_acked > 0 {
        problems.push(format!("log-lease acknowledged {} reads, {} writes in the window", w.reads_acked, w.writes_acked));
    }

    let defer = r("defer-commit");
    let (w, lease_at) = (defer.window, defer.failover.lease.unwrap());
    let acked = w.writes_ok as f64 / w.writes.max(1) as f64;
    let in_burst = w.first_write_ack.is_none_or(|t| t >= lease_at)
        && w.last_write_ack.is_none_or(|t| t <= lease_at + BURST_SLACK);
    if w.writes == 0 || acked < WINDOW_SUCCESS || !in_burst {
        problems.push(format!("defer-commit acked {}/{} window writes, burst {in_burst}", w.writes_ok, w.writes));
    }

    let full = r("leaseguard");
    let w = full.window;
    if w.reads == 0 || (w.reads_ok as f64) < WINDOW_SUCCESS * w.reads as f64 {
        problems.push(format!("leaseguard served {}/{} window reads", w.reads_ok, w.reads));
    }

    for p in ["inconsistent", "quorum"] {
        let x = r(p);
        let ok = matches!((x.failover.election, x.read_resumed), (Some(e), Some(t)) if t <= e + RESUME_SLACK);
        if !ok {
            problems.push(format!("{p} reads resumed at {:?}, election {:?}", x.read_resumed, x.failover.election));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "window {}ms; defer-commit {}/{} writes; leaseguard {}/{} reads; {} problems {:?}",
            (defer.failover.lease.unwrap() - defer.failover.election.unwrap()).as_millis(),
            defer.window.writes_ok,
            defer.window.writes,
            full.window.reads_ok,
            full.window.reads,
            problems.len(),
            problems.first()
        ),
    )
}

fn c8_skewness() -> Outcome {
    let totals = skew_totals(&skewness(&SKEW_SEEDS, &SKEW_EXPONENTS).unwrap());
    let rates: Vec<f64> = totals.iter().map(|r| r.rate()).collect();
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);
    let pass = monotone && rates[0] >= SKEW_FLOOR_AT_ZERO && rates[4] <= SKEW_RATIO_AT_TWO * rates[0];
    let shown: Vec<String> = totals.iter().map(|r| format!("a={}:{:.3}", r.a, r.rate())).collect();
    outcome(pass, format!("window read success {}", shown.join(" ")))
}

fn c9_read_your_writes() -> Outcome {
    let cases = read_your_writes::all_cases();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.holds()).map(|c| c.name).collect();
    outcome(failed.is_empty(), format!("{} scripted cases, failed {:?}", cases.len(), failed))
}

fn c10_drift() -> Outcome {
    let mechanism = MechanismConfig { clock_mode: ClockMode::DriftTimer, inherited_reads: false, ..MechanismConfig::leaseguard() };
    let configs: Vec<SimConfig> = (0..INVARIANT_RUNS)
        .map(|seed| {
            let mut c = SimConfig::chaos(mechanism.clone(), seed);
            c.clock = ClockSettings { drift: DriftMode::Extreme, epsilon: Duration::from_millis(10), ..c.clock };
            c
        })
        .collect();
    let bad = chaos_failures(configs);
    let rejected = SimConfig::parse("mechanism.clock_mode = drift-timer\nmechanism.inherited_reads = true\n").is_err();
    let accepted = SimConfig::parse("mechanism.clock_mode = drift-timer\nmechanism.inherited_reads = false\n").is_ok();
    outcome(
        bad.is_empty() && rejected && accepted,
        format!("{INVARIANT_RUNS} drift runs, {} with violations {:?}; inherited reads rejected: {rejected}", bad.len(), bad.first()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("determinism", c1_determinism),
        ("raft invariants", c2_invariants),
        ("linearizable failovers", c3_positive),
        ("predicted violations", c4_negative),
        ("checker oracle", c5_oracle),
        ("latency shape", c6_latency),
        ("failover timeline", c7_availability),
        ("skew shape", c8_skewness),
        ("read-your-writes cases", c9_read_your_writes),
        ("drift timers", c10_drift),
    ];
    let mut failed = BTreeSet::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {name} ({:.1}s): {}", i + 1, started.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.insert(i + 1);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
