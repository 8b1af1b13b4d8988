use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid scene spec: {0}")]
    SceneSpec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("grid configs differ between sweeps")]
    GridMismatch,

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("backward called on a tape that was already consumed")]
    TapeConsumed,

    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("upsample stride {got:?} does not match recorded encoder stride {expected:?}")]
    StrideMismatch { expected: [u32; 4], got: [u32; 4] },

    #[error("dense oracle grid {0:?} exceeds the 16x16x16x8 bound")]
    OracleTooLarge([usize; 4]),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
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

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
