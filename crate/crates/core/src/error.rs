use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by loading, bounding, refinement and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("property error: {0}")]
    Property(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("execution {index}: {source}")]
    Execution {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::Dimension {
            expected,
            got,
            context,
        }
    }

    pub(crate) fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_execution(self, index: usize) -> Self {
        Error::Execution {
            index,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping phase and execution annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } | Error::Execution { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for malformed networks or properties, 3 for solver
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse { .. }
            | Error::Layer { .. }
            | Error::Property(_)
            | Error::Dimension { .. } => 2,
            Error::Solver(_) => 3,
            _ => 1,
        }
    }
}
