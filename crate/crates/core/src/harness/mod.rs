//! Experiment runner: configuration, seeded runs with per-round traces,
//! horizon sweeps and the verification suites behind the CLI.

pub mod config;
pub mod run;
pub mod sweep;
pub mod trace;
pub mod verify;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::TradeError;

pub use config::{Algorithm, ExperimentConfig};
pub use run::{run_experiment, write_run, RunOutput, RunSummary};
pub use sweep::{fit_slope, sweep, SweepPoint, SweepSummary};
pub use verify::{Check, VerifyKind};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Trade(#[from] TradeError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// `2` for anything a corrected configuration would fix, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } => 2,
            HarnessError::Trade(
                TradeError::InvalidArgument(_)
                | TradeError::ContextNorm { .. }
                | TradeError::ParameterNorm { .. }
                | TradeError::Dimension { .. }
                | TradeError::Noise(_)
                | TradeError::Replay { .. }
                | TradeError::Exhausted(_),
            ) => 2,
            HarnessError::Trade(_) | HarnessError::Assertion(_) => 1,
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Worker count from `BTRADE_WORKERS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("BTRADE_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
