use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("continued fraction did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("no observations available for window at fixed value {fixed_value}")]
    EmptyWindow { fixed_value: u64 },
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),
    #[error("observed information is not negative definite")]
    SingularInformation,
    #[error("no estimate for {orientation} BAD={bad} fixed={fixed_value}")]
    MissingEstimate {
        orientation: String,
        bad: f64,
        fixed_value: u64,
    },
    #[error("all combination weights are zero")]
    DegenerateWeights,
    #[error("free log-likelihood {free} is below constrained {constrained}")]
    NestingViolation { free: f64, constrained: f64 },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: missing field {field}", path.display())]
    MissingField {
        path: PathBuf,
        line: usize,
        field: String,
    },
    #[error("overlapping BAD intervals on {chrom}: [{a_start}, {a_end}) and [{b_start}, {b_end})")]
    AnnotationConflict {
        chrom: String,
        a_start: u64,
        a_end: u64,
        b_start: u64,
        b_end: u64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("store version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("input {} changed since it was logged", path.display())]
    HashMismatch { path: PathBuf },
    #[error("project is locked by another command: {}", .0.display())]
    Locked(PathBuf),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::NumericFailure(_) => "NumericFailure",
            Error::EmptyWindow { .. } => "EmptyWindow",
            Error::DegenerateWindow(_) => "DegenerateWindow",
            Error::SingularInformation => "SingularInformation",
            Error::MissingEstimate { .. } => "MissingEstimate",
            Error::DegenerateWeights => "DegenerateWeights",
            Error::NestingViolation { .. } => "NestingViolation",
            Error::Parse { .. } => "ParseError",
            Error::MissingField { .. } => "MissingField",
            Error::AnnotationConflict { .. } => "AnnotationConflict",
            Error::EmptyDataset => "EmptyDataset",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptStore(_) => "CorruptStore",
            Error::HashMismatch { .. } => "HashMismatch",
            Error::Locked(_) => "Locked",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
