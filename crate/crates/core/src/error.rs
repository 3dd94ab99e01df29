use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
        }
    }
}

/// Which on-disk container a format error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Dataset,
    Checkpoint,
    Database,
}

impl std::fmt::Display for FileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FileKind::Dataset => "dataset",
            FileKind::Checkpoint => "checkpoint",
            FileKind::Database => "descriptor database",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("degenerate input in {op}: norm {norm:e} is below {eps:e}")]
    Degenerate { op: &'static str, norm: f64, eps: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward: {0}")]
    Backward(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameter `{0}` not found")]
    MissingParam(String),
    #[error("no mineable triplet: {0}")]
    EmptyMining(String),
    #[error("{kind} format error: {msg}")]
    Format { kind: FileKind, msg: String },
    #[error("{kind} version mismatch: file has version {found}, expected {expected}")]
    Version {
        kind: FileKind,
        found: u32,
        expected: u32,
    },
    #[error("{kind} integrity error: {msg}")]
    Integrity { kind: FileKind, msg: String },
    #[error("frozen teacher violated: {0}")]
    FrozenTeacher(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::MissingParam(_) => Category::Config,
            Error::Shape { .. }
            | Error::InvalidTensor(_)
            | Error::Degenerate { .. }
            | Error::NonFinite(_)
            | Error::Backward(_)
            | Error::FrozenTeacher(_)
            | Error::Diverged(_) => Category::Numeric,
            Error::EmptyMining(_)
            | Error::Format { .. }
            | Error::Version { .. }
            | Error::Integrity { .. }
            | Error::Io { .. }
            | Error::Json(_) => Category::Data,
        }
    }

    /// Stable numeric code, distinct per failure kind. Version mismatches get
    /// one code per file kind.
    pub fn code(&self) -> i32 {
        match self {
            Error::Config(_) => 10,
            Error::MissingParam(_) => 11,
            Error::Shape { .. } => 20,
            Error::InvalidTensor(_) => 21,
            Error::Degenerate { .. } => 22,
            Error::NonFinite(_) => 23,
            Error::Backward(_) => 24,
            Error::FrozenTeacher(_) => 25,
            Error::Diverged(_) => 26,
            Error::EmptyMining(_) => 30,
            Error::Format { .. } => 31,
            Error::Integrity { .. } => 32,
            Error::Io { .. } => 33,
            Error::Json(_) => 34,
            Error::Version { kind, .. } => match kind {
                FileKind::Dataset => 41,
                FileKind::Checkpoint => 42,
                FileKind::Database => 43,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
