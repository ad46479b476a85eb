//! CLI error classification onto process exit codes: 2 for configuration
//! problems, 3 for I/O, 4 for data/shape mismatches.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Data(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        CliError::Io(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

/// Classify a core error from loading a data artifact (cube, results,
/// layout): missing/unreadable files are I/O, everything else is a data
/// problem.
pub fn data_error(e: etalon_core::Error) -> CliError {
    match e {
        etalon_core::Error::Io(e) => CliError::io(e),
        other => CliError::data(other),
    }
}
