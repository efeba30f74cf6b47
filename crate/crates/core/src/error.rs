use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand or input shapes do not line up; `node` names the offending node.
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },

    /// An API was called out of order, e.g. `backward` before `forward`.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Input geometry that cannot be processed (coincident points, zero-volume meshes, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// VAE training produced a non-finite loss. Carries the last parameters that were finite.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_good: Box<crate::partvae::VaeParams>,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(node: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
