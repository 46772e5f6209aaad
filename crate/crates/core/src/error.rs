//! Error type shared by all simulation modules.

use std::fmt;
use std::io;

/// Errors produced by the simulation engine.
#[derive(Debug)]
pub enum KsError {
    /// Invalid configuration (unknown key, bad value, inconsistent combination).
    Config(String),
    /// Numerical input violated a precondition (non-finite value, out-of-range).
    InvalidInput(String),
    /// Fields or ensembles with mismatched grid specs were combined.
    SpecMismatch(String),
    /// A position fell outside the closed domain where one was required inside.
    OutOfDomain { x: f64, y: f64 },
    /// The assembled linear operator is singular (alpha = 0 with k = 0).
    SingularOperator(String),
    /// Runtime failure while executing an experiment.
    Runtime(String),
    /// I/O failure writing outputs.
    Io(io::Error),
}

impl fmt::Display for KsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KsError::Config(msg) => write!(f, "config error: {msg}"),
            KsError::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            KsError::SpecMismatch(msg) => write!(f, "grid spec mismatch: {msg}"),
            KsError::OutOfDomain { x, y } => {
                write!(f, "position ({x}, {y}) outside computational domain")
            }
            KsError::SingularOperator(msg) => write!(f, "singular operator: {msg}"),
            KsError::Runtime(msg) => write!(f, "runtime error: {msg}"),
            KsError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for KsError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            KsError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for KsError {
    fn from(e: io::Error) -> Self {
        KsError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, KsError>;
