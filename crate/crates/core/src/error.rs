use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; `path` names the offending field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("overlap region ({left}, {right}) contains no client")]
    EmptyRegion { left: usize, right: usize },

    #[error("cell {0} has no uploading client")]
    EmptyCell(usize),

    #[error("ROC {roc} merged twice into the same relay stream")]
    DoubleMerge { roc: usize },

    #[error("model diverged: non-finite entry after local step (client {client})")]
    Divergence { client: usize },

    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("instance too large for exhaustive search: {vertices} vertices (limit {limit})")]
    Size { vertices: usize, limit: usize },

    #[error("realized participation differs from scheduler prediction in round {round}")]
    TraceMismatch { round: usize },

    #[error("comparison needs at least two scheme traces in {0}")]
    MissingTraces(PathBuf),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parse { .. })
    }
}
