use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HutError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HutError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("rank {rank} is not valid for a {rows}x{cols} weight{}", target.map(|t| format!(" ({t})")).unwrap_or_default())]
    Rank {
        rank: usize,
        rows: usize,
        cols: usize,
        target: Option<&'static str>,
    },

    #[error("a FLOP counting scope is already active on this thread")]
    NestedScope,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HutError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HutError::Io {
            path: path.into(),
            source,
        }
    }
}
