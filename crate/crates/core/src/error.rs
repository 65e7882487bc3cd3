//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Errors carry
//! enough context to be actionable: shape errors name both shapes, parse
//! errors name the file and line, id errors name the offending id.

use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors had incompatible shapes for the attempted operation.
    #[error("shape mismatch in {op}: {lhs:?} is incompatible with {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single tensor had a shape the operation cannot accept.
    #[error("invalid shape in {op}: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    /// Malformed input data, with file/line provenance when available.
    #[error("{file}:{line}: {reason}")]
    Parse {
        file: String,
        line: u64,
        reason: String,
    },

    /// An external or internal id that does not exist in the store.
    #[error("unknown {kind} id {id:?}")]
    UnknownId { kind: &'static str, id: String },

    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Filesystem failure, tagged with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// (De)serialization failure, tagged with the path involved.
    #[error("serialization error on {path}: {reason}")]
    Serialize { path: String, reason: String },

    /// Training produced a non-finite loss and aborted.
    #[error("non-finite loss at epoch {epoch}, step {step}; aborting")]
    NonFiniteLoss { epoch: usize, step: usize },

    /// A precondition that does not fit the other variants.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
