use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point is behind the camera (depth {depth}, near {near})")]
    BehindCamera { depth: f64, near: f64 },

    #[error("scene is empty")]
    EmptyScene,

    #[error("invalid target node {node}: {reason}")]
    InvalidTarget { node: u32, reason: &'static str },

    #[error("cannot respawn the root node")]
    CannotRespawnRoot,

    #[error("corrupt scene file at byte {offset}: {reason}")]
    CorruptFile { offset: u64, reason: String },

    #[error("unknown SPT id {0}")]
    SptNotFound(u32),

    #[error("invalid attribute block: {0}")]
    InvalidBlock(String),

    #[error("entry of {bytes} bytes exceeds the cache budget of {budget} bytes")]
    OverBudget { bytes: u64, budget: u64 },

    #[error("view graph needs at least two views, got {0}")]
    DegenerateGraph(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("PLY parse error at {location}: {reason}")]
    Ply { location: String, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(offset: u64, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            offset,
            reason: reason.into(),
        }
    }
}
