use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leaseguard_core::config::MECHANISM_PRESETS;
use leaseguard_core::{check, History, SimConfig};
use leaseguard_sim::artifacts::{run_once, violation_expected, RunReport};
use leaseguard_sim::experiments::{self, SKEW_EXPONENTS};
use leaseguard_sim::SimError;

/// Deterministic simulator for Raft with log-based leader leases.
#[derive(Parser)]
#[command(name = "leaseguard", version)]
struct Cli {
    /// Overrides the seed of every simulated run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where artifacts are written.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration file.
    Run { config: PathBuf },
    /// p90 read/write latency against one-way network latency.
    LatencySweep,
    /// Leader crash timeline for one mechanism.
    Availability {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(MECHANISM_PRESETS))]
        mechanism: String,
    },
    /// Read success while the new leader waits out the old lease, against key skew.
    Skewness {
        /// Seeds to aggregate, counting up from --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Check a history dump for linearizability.
    Check { history: PathBuf },
}

enum Failure {
    NotLinearizable,
    Input(SimError),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Input(e)
    }
}

fn read(path: &Path) -> Result<String, SimError> {
    fs::read_to_string(path).map_err(|e| SimError::io(path, e))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| SimError::io(&path, e))
}

fn report_run(report: &RunReport, out_dir: &Path, stem: &str) -> Result<(), Failure> {
    for path in report.write(out_dir, stem)? {
        println!("wrote {}", path.display());
    }
    let o = &report.output;
    println!("operations: {}, events: {}", o.history.len(), o.events);
    for v in &o.violations {
        println!("invariant violated: {v}");
    }
    match &report.verdict.witness {
        None => println!("linearizable"),
        Some(w) => println!("NOT linearizable: {}", w.describe()),
    }
    if (!report.verdict.linearizable || !o.violations.is_empty()) && !violation_expected(&report.config) {
        return Err(Failure::NotLinearizable);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(1);
    match cli.command {
        Command::Run { config } => {
            let mut cfg = SimConfig::parse(&read(&config)?).map_err(SimError::from)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
            report_run(&run_once(cfg)?, &cli.out_dir, &stem)
        }
        Command::LatencySweep => {
            let cells = experiments::latency_sweep(seed, &experiments::latency_means())?;
            let table = experiments::latency_table(&cells);
            print!("{table}");
            write(&cli.out_dir, "latency.csv", &table)?;
            Ok(())
        }
        Command::Availability { mechanism } => {
            let r = experiments::availability(&mechanism, seed)?;
            print!("{}", r.summary());
            write(&cli.out_dir, &format!("availability-{mechanism}.summary.csv"), &r.summary())?;
            report_run(&r.run, &cli.out_dir, &format!("availability-{mechanism}"))
        }
        Command::Skewness { seeds } => {
            let seeds: Vec<u64> = (seed..seed + seeds.max(1)).collect();
            let rows = experiments::skewness(&seeds, &SKEW_EXPONENTS)?;
            let totals = experiments::skew_table(&experiments::skew_totals(&rows));
            print!("{totals}");
            write(&cli.out_dir, "skewness.csv", &experiments::skew_table(&rows))?;
            write(&cli.out_dir, "skewness-totals.csv", &totals)?;
            Ok(())
        }
        Command::Check { history } => {
            let h = History::parse(&read(&history)?).map_err(SimError::from)?;
            let v = check(&h).map_err(SimError::from)?;
            match v.witness {
                None => {
                    println!("linearizable ({} operations)", h.len());
                    Ok(())
                }
                Some(w) => {
                    println!("NOT linearizable: {}", w.describe());
                    Err(Failure::NotLinearizable)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotLinearizable) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
