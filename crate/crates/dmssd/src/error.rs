use std::io;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad dimensions, densities, rewards, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an API contract (e.g. submitted a masked action).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The map cannot support the requested operation (no free cells,
    /// no component large enough to place all robots, ...).
    #[error("degenerate map: {0}")]
    MapDegenerate(String),

    /// Malformed map file, model file, config file or wire message.
    #[error("parse error: {0}")]
    Parse(String),

    /// A metric is undefined on the given input (e.g. empty episode list).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training diverged (non-finite loss or parameters).
    #[error("training aborted: {0}")]
    Training(String),

    /// Swarm runtime failure (peer timeout budget exceeded, bad report, ...).
    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 runtime, 4 check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) => 2,
            _ => 3,
        }
    }
}
