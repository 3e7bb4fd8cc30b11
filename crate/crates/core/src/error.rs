use std::fs::File;
use std::io;
use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{source_name}, line {line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("collapse map is incomplete: {0}")]
    Completeness(String),

    #[error("collapse map folds onto {found} evaluation phones, expected {expected}")]
    Cardinality { found: usize, expected: usize },

    #[error("forward cache does not match batch: {0}")]
    Consistency(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }

    /// Process exit status for the CLI: 2 for numerical failures, 1 for
    /// everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NonFinite { .. } | Error::GradientCheck(_) => 2,
            _ => 1,
        }
    }
}

/// Opens `path`, naming it in the error.
pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(e, path))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| with_path(e, path))
}

fn with_path(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
