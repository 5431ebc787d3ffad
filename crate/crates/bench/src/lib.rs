//! Experiment runner for the logistic-regression learners: generates
//! streams, runs learners, and writes ledgers and summaries as CSV.

pub mod config;
pub mod experiments;
pub mod output;
pub mod streams;

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use config::{ConfigError, ExperimentConfig};
use experiments::{ledger_header, resolve, run_seed, summary_header, Resolved, SeedOutput};
use output::Table;

#[derive(Debug, Clone, PartialEq)]
pub enum BenchError {
    Config(String),
    Budget(String),
    Run(String),
    Io(String),
}

impl BenchError {
    /// 2 for bad configuration, 3 for an exceeded compute budget, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Budget(_) => 3,
            BenchError::Run(_) | BenchError::Io(_) => 1,
        }
    }
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Config(m) => write!(f, "invalid config: {m}"),
            BenchError::Budget(m) => write!(f, "{m}"),
            BenchError::Run(m) => write!(f, "run failed: {m}"),
            BenchError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<ConfigError> for BenchError {
    fn from(e: ConfigError) -> Self {
        BenchError::Config(e.0)
    }
}

/// Argument errors raised by the core while setting up a run are treated as
/// configuration errors.
impl From<ilr_core::Error> for BenchError {
    fn from(e: ilr_core::Error) -> Self {
        match e {
            ilr_core::Error::InvalidArgument(m) => BenchError::Config(m),
            e @ ilr_core::Error::BudgetExceeded { .. } => BenchError::Budget(e.to_string()),
            ilr_core::Error::Domain(m) => BenchError::Run(m),
            ilr_core::Error::Io(m) => BenchError::Io(m),
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

/// All results of a run, in seed order.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub seeds: Vec<u64>,
    pub ledger: Table,
    pub summary: Table,
    pub streams: Vec<SeedOutput>,
}

/// Seeds `seed, seed + 1, …, seed + seeds − 1`.
pub fn seed_list(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.seeds).map(|i| cfg.seed + i).collect()
}

/// Runs every seed (in parallel) without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, BenchError> {
    cfg.validate()?;
    let resolved = resolve(cfg)?;
    let seeds = seed_list(cfg);
    let outs = seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &resolved, s))
        .collect::<ilr_core::Result<Vec<_>>>()?;
    let mut ledger = Table::new(ledger_header(cfg.experiment));
    let mut summary = Table::new(summary_header(cfg.experiment));
    for o in &outs {
        ledger.append(o.ledger.clone());
        summary.push(o.summary.clone());
    }
    Ok(RunOutput {
        config: cfg.clone(),
        resolved,
        seeds,
        ledger,
        summary,
        streams: outs,
    })
}

/// Writes `ledger.csv`, `summary.csv`, `metadata.json` and one
/// `streams/seed_<s>.csv` per seed under `dir`.
pub fn write_outputs(run: &RunOutput, dir: &Path) -> Result<(), BenchError> {
    output::ensure_dir(&dir.join("streams"))?;
    run.ledger.write(&dir.join("ledger.csv"))?;
    run.summary.write(&dir.join("summary.csv"))?;
    for o in &run.streams {
        let f = fs::File::create(dir.join("streams").join(format!("seed_{}.csv", o.seed)))?;
        o.stream.write_csv(std::io::BufWriter::new(f))?;
    }
    let meta = json!({
        "tool": "ilr-bench",
        "version": env!("CARGO_PKG_VERSION"),
        "config": run.config,
        "resolved": run.resolved.to_json(&run.config),
        "seeds": run.seeds,
        "files": {
            "ledger": "ledger.csv",
            "summary": "summary.csv",
            "streams": run.seeds.iter().map(|s| format!("streams/seed_{s}.csv")).collect::<Vec<_>>(),
        },
    });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| BenchError::Io(e.to_string()))?;
    fs::write(dir.join("metadata.json"), text + "\n")?;
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, BenchError> {
    let out = execute(cfg)?;
    write_outputs(&out, &cfg.out)?;
    Ok(out)
}
