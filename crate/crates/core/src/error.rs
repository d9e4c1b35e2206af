// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the library.
///
/// Variants are grouped by how a caller is expected to react: usage and
/// index errors point at bad arguments, numeric and oracle errors at a
/// computation that produced non-finite values, format errors at a
/// malformed checkpoint.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    /// API misuse (wrong tape, duplicate layers, out-of-range `t`, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A neuron or sample index is out of range for the bound model.
    #[error("index error: {0}")]
    Index(String),

    /// A computation produced a NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The finite-difference oracle evaluated to a non-finite value.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// Checkpoint does not start with the expected magic bytes.
    #[error("checkpoint format error: bad magic {found:?}")]
    BadMagic { found: Vec<u8> },

    /// Checkpoint magic is recognised but carries another format version.
    #[error("checkpoint format error: version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: String },

    /// A stored tensor disagrees with the shape implied by the header config.
    #[error("checkpoint shape mismatch for `{tensor}`: header {found:?}, config expects {expected:?}")]
    CheckpointShape {
        tensor: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    /// The blob ends before the named tensor.
    #[error("checkpoint truncated: tensor `{tensor}` is missing from the blob")]
    Truncated { tensor: String },

    /// The header is not valid JSON or misses required fields.
    #[error("checkpoint header error: {0}")]
    Header(String),

    /// Training diverged.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by non-finite arithmetic or a failed
    /// verification, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::OracleFailure(_) | Error::Training { .. }
        )
    }
}
