//! Error type shared by every module of the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error enum.
///
/// Variants map onto the CLI exit-code classes: I/O and parse failures are
/// reported as exit 3, numerical divergence as exit 4, and every other
/// (configuration / input-validation) failure as exit 2.
#[derive(Debug, Error)]
pub enum DslError {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("self-loop not allowed on node {node}")]
    SelfLoop { node: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("label must be -1 or +1 (found {found})")]
    InvalidLabel { found: String },

    #[error("labels contain a single class; need both -1 and +1")]
    SingleClass,

    #[error("conductance undefined: {reason}")]
    ConductanceUndefined { reason: String },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter {
        name: &'static str,
        message: String,
    },

    #[error("unknown node id {node} in {context}")]
    UnknownNode { node: String, context: String },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("singular system matrix; regularize: increase lambda1 or add ridge epsilon")]
    SingularSystem,

    #[error("divergence: non-finite objective at outer iteration {iteration}")]
    Divergence { iteration: usize },
}

pub type Result<T> = std::result::Result<T, DslError>;

impl DslError {
    /// Helper for wrapping I/O failures with the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DslError::Io {
            path: path.into(),
            source,
        }
    }
}
