//! Error-to-exit-code mapping.

use std::fmt;

use empalign::ppo::PpoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    General = 1,
    Validation = 2,
    MissingPrerequisite = 3,
    Divergence = 4,
}

#[derive(Debug)]
pub struct CliError {
    message: String,
    code: ExitCode,
}

impl CliError {
    pub fn validation(err: impl fmt::Display) -> Self {
        Self {
            message: err.to_string(),
            code: ExitCode::Validation,
        }
    }

    pub fn missing(err: impl fmt::Display) -> Self {
        Self {
            message: err.to_string(),
            code: ExitCode::MissingPrerequisite,
        }
    }

    pub fn general(err: impl fmt::Display) -> Self {
        Self {
            message: err.to_string(),
            code: ExitCode::General,
        }
    }

    pub fn from_ppo(err: PpoError) -> Self {
        let code = match &err {
            PpoError::Diverged { .. } => ExitCode::Divergence,
            _ => ExitCode::General,
        };
        Self {
            message: err.to_string(),
            code,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}
