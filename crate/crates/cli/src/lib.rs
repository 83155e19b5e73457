//! Experiment runner: train a model on a benchmark from a TOML config and
//! write metrics, loss traces, field grids and band reports.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod artifacts;
pub mod config;
pub mod run;
pub mod sweep;

pub use artifacts::{CompareRow, RunReport};
pub use config::{RunConfig, SweepConfig};

/// Overrides the default output root (`runs`).
pub const OUTPUT_ROOT_ENV: &str = "SPFORMER_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn read(path: &Path, message: impl ToString) -> Self {
        Self::Read {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// 1 usage, 2 training failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Training(_) => 2,
            Self::Io { .. } | Self::Read { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Crate version plus `git describe` of the source tree at build time.
pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("SPFORMER_GIT_DESCRIBE"))
}
