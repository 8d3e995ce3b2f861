use std::fmt;

use shapekit::Error;

/// Process exit status of every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    ValidationFailed = 1,
    InputError = 2,
    SolverError = 3,
    DegenerateInference = 4,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError { status: ExitStatus::InputError, message: msg.into() }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError { status: ExitStatus::ValidationFailed, message: msg.into() }
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::input(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::UnsupportedOrder { .. } | Error::NonFinite(_) => {
                ExitStatus::InputError
            }
            Error::NotPsd(_) | Error::Singular(_) | Error::NnlsIterationCap(_) => ExitStatus::SolverError,
            Error::DegenerateCovariance(_) => ExitStatus::DegenerateInference,
        };
        CliError { status, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
