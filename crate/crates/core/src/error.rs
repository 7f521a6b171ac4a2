use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid sparsity {0}: must lie in [0, 1)")]
    InvalidSparsity(f64),

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error(
        "capacity exceeded in layer {layer}: asked to grow {requested} but only {available} positions are inactive"
    )]
    Capacity {
        layer: String,
        requested: usize,
        available: usize,
    },

    #[error("timestep {t} out of range 1..={max}")]
    Index { t: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("config file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("failed to parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable category name, used by the CLI for machine-parseable failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidSparsity(_) => "invalid-sparsity",
            Error::Infeasible(_) => "infeasible",
            Error::Capacity { .. } => "capacity",
            Error::Index { .. } => "index",
            Error::Config(_) | Error::UnknownKey(_) => "config",
            Error::MissingFile(_) => "missing-file",
            Error::Parse { .. } => "parse",
            Error::BadMagic(_) | Error::Version { .. } | Error::Truncated(_) | Error::Malformed(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
