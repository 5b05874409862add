//! Command-line front end: configuration parsing, experiment runners and
//! artifact writers. The `distphase` binary is a thin wrapper around this.

pub mod config;
pub mod experiment;

use std::path::Path;

pub use config::{parse_config, ExperimentConfig, ExperimentKind, GaugeChoice};
pub use experiment::{run_experiment, Check, Outcome};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{module}: {source}")]
    Numeric {
        module: &'static str,
        #[source]
        source: distphase::Error,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(key: &str, message: impl std::fmt::Display) -> Self {
        CliError::Config(format!("`{key}`: {message}"))
    }

    pub fn from_config(e: distphase::Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// Parameter errors are configuration problems wherever they surface.
    pub fn numeric(module: &'static str, source: distphase::Error) -> Self {
        match source {
            distphase::Error::InvalidParameter { .. } => CliError::Config(format!("{module}: {source}")),
            source => CliError::Numeric { module, source },
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Numeric { .. } | CliError::Io { .. } => exit::NUMERIC,
        }
    }
}
