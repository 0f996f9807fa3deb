//! Failures with their exit codes: 1 usage, 2 data, 3 verification.

use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Verification(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

/// Maps an error into the usage bucket: the command line itself is wrong.
pub fn usage<E: Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

/// Maps an error into the data bucket: inputs, artifacts, or I/O.
pub fn data<E: Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}
