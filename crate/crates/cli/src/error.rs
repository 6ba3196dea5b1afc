use std::path::PathBuf;

use thiserror::Error;

/// Failures of the pipeline, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing cache {}: run the {stage} stage first", path.display())]
    MissingCache { path: PathBuf, stage: &'static str },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration errors, 3 for missing caches and stage failures.
    /// A completed run that misses its target exits with 1 (not an error).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingCache { .. } | CliError::Stage { .. } | CliError::Io { .. } => 3,
        }
    }

    /// Stable machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::MissingCache { .. } => "MissingCache",
            CliError::Stage { .. } => "StageError",
            CliError::Io { .. } => "IoError",
        }
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Stage { stage, message: err.to_string() }
    }
}
