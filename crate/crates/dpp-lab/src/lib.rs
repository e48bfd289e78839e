//! Config-driven experiment runner on top of `dpp-core`.

pub mod catalog;
pub mod config;
pub mod encode;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dpp_core::barriers::BarrierError;
use dpp_core::czdecomp::CzError;
use dpp_core::envelope::EnvelopeError;
use dpp_core::lattice::LatticeError;
use dpp_core::measures::MeasureError;
use dpp_core::operators::OperatorError;
use dpp_core::regularity::RegularityError;
use dpp_core::solver::SolverError;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::Outcome;

/// Exit status when every statement check passes.
pub const EXIT_PASS: i32 = 0;
/// Exit status for usage, configuration and runtime errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit status when a statement check fails.
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error in `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("unknown experiment kind `{name}`{}", fmt_suggestions(.suggestions))]
    UnknownKind { name: String, suggestions: Vec<String> },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("output error: {0}")]
    Output(String),
}

fn fmt_suggestions(s: &[String]) -> String {
    if s.is_empty() {
        format!("; known kinds: {}", ExperimentKind::ALL.map(|k| k.name()).join(", "))
    } else {
        format!("; did you mean {}?", s.iter().map(|x| format!("`{x}`")).collect::<Vec<_>>().join(" or "))
    }
}

impl LabError {
    pub fn field(field: &str, msg: impl Into<String>) -> Self {
        LabError::Field {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        EXIT_ERROR
    }
}

impl From<RegularityError> for LabError {
    fn from(e: RegularityError) -> Self {
        match e {
            RegularityError::Precondition(m) => LabError::Precondition(m),
            RegularityError::Parameter(m) => LabError::Config(m),
            other => LabError::Compute(other.to_string()),
        }
    }
}

macro_rules! compute_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for LabError {
            fn from(e: $t) -> Self {
                LabError::Compute(e.to_string())
            }
        }
    )*};
}

compute_errors!(SolverError, OperatorError, MeasureError, LatticeError, CzError, BarrierError, EnvelopeError, std::io::Error);

/// Files written by [`run`].
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub pass: bool,
    pub checks: Vec<(String, bool)>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

/// The reproducible part of a run: identical bytes for identical configs.
pub fn report(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<Value, LabError> {
    let echo = serde_json::to_value(cfg).map_err(|e| LabError::Output(e.to_string()))?;
    Ok(json!({
        "schema": config::SCHEMA_VERSION,
        "kind": cfg.kind.name(),
        "seed": cfg.seed,
        "config": echo,
        "pass": outcome.pass(),
        "checks": outcome.checks.iter().map(|(n, p)| json!({ "name": n, "pass": p })).collect::<Vec<_>>(),
        "results": outcome.results,
    }))
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Loads, validates and runs one experiment, writing `report.json`,
/// `series.csv`, `run.meta.json` and any extra artifacts into `out_dir`.
pub fn run(cfg_path: &Path, out_dir: &Path) -> Result<RunSummary, LabError> {
    let cfg = ExperimentConfig::load(cfg_path)?;
    run_config(&cfg, out_dir)
}

pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, LabError> {
    cfg.validate()?;
    let started = unix_ms();
    let outcome = experiments::run(cfg)?;
    let finished = unix_ms();
    fs::create_dir_all(out_dir).map_err(|e| LabError::Output(format!("{}: {e}", out_dir.display())))?;
    output::write_json(&out_dir.join("report.json"), &report(cfg, &outcome)?)?;
    outcome.series.write(&out_dir.join("series.csv"))?;
    for (name, bytes) in &outcome.files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| LabError::Output(format!("{}: {e}", path.display())))?;
    }
    let meta = json!({
        "started_unix_ms": started as u64,
        "finished_unix_ms": finished as u64,
        "threads": rayon::current_num_threads(),
        "timings_ms": outcome.timings.iter().map(|(n, t)| json!({ "name": n, "ms": output::num(*t) })).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    output::write_json(&out_dir.join("run.meta.json"), &meta)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        pass: outcome.pass(),
        checks: outcome.checks,
    })
}
