//! Deterministic discrete-event simulator of Raft with log-based leader
//! leases ("the log is the lease"), plus a linearizability checker for
//! append-only list histories.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches
//! files, processes, or the command line lives in the `leaseguard-sim`
//! companion crate.

#![no_std]

extern crate alloc;

pub mod checker;
pub mod clock;
pub mod cluster;
pub mod config;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod net;
pub mod observer;
pub mod raft;
pub mod rng;
pub mod time;
pub mod workload;

pub use checker::{brute_force_check, check, Verdict};
pub use clock::{is_older_than, TimeInterval};
pub use cluster::{Cluster, Marker, RunOutput};
pub use config::{ConfigError, SimConfig};
pub use kernel::{EventId, Handler, Scheduler};
pub use raft::{Command, LogEntry, MechanismConfig, MechanismKind, Node};
pub use time::SimTime;
pub use workload::{ClientLogEntry, History, OpType, Value};
