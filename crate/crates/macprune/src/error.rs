//! Crate-wide error type.

/// Errors produced anywhere in the toolkit.
///
/// The CLI maps variants onto process exit codes: configuration, input and
/// parse problems exit with 2, infeasible selections with 3, and numeric
/// failures (diverged training) with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("netlist structure error: {0}")]
    Structure(String),

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("threshold error: {0}")]
    Threshold(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            Error::Training(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
