//! Experiment drivers, artifact files, and the `leaseguard` command line
//! for the simulator in `leaseguard-core`.

pub mod artifacts;
pub mod experiments;

use std::path::PathBuf;

use leaseguard_core::checker::CheckError;
use leaseguard_core::workload::HistoryParseError;
use leaseguard_core::ConfigError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("history: {0}")]
    History(#[from] HistoryParseError),
    #[error("checker: {0}")]
    Check(#[from] CheckError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }
}
