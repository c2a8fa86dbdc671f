use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    /// Invalid parameters or input data rejected by the model.
    #[error("invalid input: {0}")]
    Input(spdcmux::Error),
    /// Truncation leakage, non-convergence and similar.
    #[error("numerical failure: {0}")]
    Numerical(spdcmux::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<spdcmux::Error> for RunError {
    fn from(e: spdcmux::Error) -> Self {
        use spdcmux::Error as E;
        match e {
            E::OutOfRange { .. }
            | E::Parse(_)
            | E::UnknownMode(_)
            | E::DuplicateMode(_)
            | E::MissingPolarization(_)
            | E::ModeCollision(_)
            | E::ZeroTruncation(_)
            | E::NoCounts
            | E::ZeroLambda => RunError::Input(e),
            _ => RunError::Numerical(e),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl RunError {
    /// Process exit status: 2 for configuration or input problems, 3 for
    /// numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Input(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}
