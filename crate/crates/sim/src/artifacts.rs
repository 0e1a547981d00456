//! One simulation run and the files it produces.
//!
//! | file | contents |
//! |------|----------|
//! | `<stem>.config` | the full configuration, every default spelled out |
//! | `<stem>.history.tsv` | one client operation per line |
//! | `<stem>.buckets.csv` | per-bucket read/write successes and failures |
//! | `<stem>.latency.csv` | p50/p90/p99 latency per operation type |
//! | `<stem>.markers.tsv` | elections, lease acquisitions, and injected faults |

use std::fs;
use std::path::{Path, PathBuf};

use leaseguard_core::cluster::{self, RunOutput};
use leaseguard_core::metrics::MetricSeries;
use leaseguard_core::net::FaultAction;
use leaseguard_core::raft::MechanismKind;
use leaseguard_core::{check, SimConfig, Verdict};

use crate::SimError;

pub struct RunReport {
    pub config: SimConfig,
    pub output: RunOutput,
    pub metrics: MetricSeries,
    pub verdict: Verdict,
}

pub fn run_once(config: SimConfig) -> Result<RunReport, SimError> {
    let output = cluster::run(config.clone())?;
    let origin = output.t0.unwrap_or_default();
    let metrics = MetricSeries::compute(&output.history, origin, config.bucket);
    let verdict = check(&output.history)?;
    Ok(RunReport { config, output, metrics, verdict })
}

/// Whether a run may legitimately produce a non-linearizable history: no
/// read protection at all, or a clock that lies.
pub fn violation_expected(config: &SimConfig) -> bool {
    config.mechanism.kind == MechanismKind::Inconsistent
        || config.faults.events.iter().any(|e| matches!(e.action, FaultAction::BreakClock(_)))
}

impl RunReport {
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("config", self.config.to_text()),
            ("history.tsv", self.output.history.to_text()),
            ("buckets.csv", self.metrics.bucket_csv()),
            ("latency.csv", self.metrics.latency_csv()),
            ("markers.tsv", self.output.markers_text()),
        ]
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, SimError> {
        fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        let mut written = Vec::new();
        for (suffix, text) in self.files() {
            let path = dir.join(format!("{stem}.{suffix}"));
            fs::write(&path, text).map_err(|e| SimError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}
