//! Experiment runner for `diamond-core`: parses a JSON config, runs one
//! algorithm and writes `samples.csv`, `metrics.jsonl`, `config-echo.json`
//! and `report.svg` into the output directory.

pub mod config;
pub mod output;
pub mod run;
pub mod svg;

use std::path::PathBuf;

pub use config::ExperimentConfig;
pub use run::run_experiment;

/// Subcommand names, in CLI order.
pub const SUBCOMMANDS: &[&str] =
    &["oracle", "sample", "posterior", "ddpm-step", "value", "guide", "smc", "search", "bon", "distill", "report"];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] diamond_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl BenchError {
    /// 2 for configuration errors, 3 for numerical-domain errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use diamond_core::Error as E;
        match self {
            BenchError::Config(_) => 2,
            BenchError::Core(e) if e.is_numerical() => 3,
            BenchError::Core(E::InvalidArgument(_) | E::InvalidMixture(_) | E::Dimension { .. }) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
