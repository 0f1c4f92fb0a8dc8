//! File formats, configuration and verbs of the `hops` command line.

use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;
pub mod files;
pub mod plots;

use files::Diagnostic;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or invalid input file.
    #[error("{0}")]
    Input(Diagnostic),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Wraps a core error, keeping the stage it names if it has one.
    pub fn stage(default: &str, e: hops_core::Error) -> Self {
        match e {
            hops_core::Error::Stage { stage, source } => Self::Stage {
                stage: stage.into(),
                message: source.to_string(),
            },
            e => Self::Stage {
                stage: default.into(),
                message: e.to_string(),
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }
}
