use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A record or set that breaks one of the embedding data-model rules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("empty set")]
    EmptySet,
    #[error("record {id}: empty vector")]
    EmptyVector { id: String },
    #[error("record {id}: non-finite component at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("record {id}: zero norm vector")]
    ZeroNorm { id: String },
    #[error("record {id}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("record {id}: encoder mismatch (expected {expected:?}, found {found:?})")]
    EncoderMismatch {
        id: String,
        expected: String,
        found: String,
    },
    #[error("record {id}: duplicate id")]
    DuplicateId { id: String },
    #[error("record {id}: empty id or subject")]
    EmptyKey { id: String },
    #[error("record {id}: generated records need a non-empty method")]
    MissingMethod { id: String },
    #[error("record {id}: real-image records must have an empty method (found {method:?})")]
    UnexpectedMethod { id: String, method: String },
    #[error("subjects with generated records but no gallery record: {}", subjects.join(", "))]
    GeneratedWithoutGallery { subjects: Vec<String> },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("zero norm vector")]
    ZeroNorm,
    #[error("empty gallery")]
    EmptyGallery,
    #[error("no relevant gallery items for query subject {subject:?} (query {query})")]
    NoRelevant { query: String, subject: String },
    #[error("empty collection")]
    EmptyCollection,
    #[error("subjects present on one side only: {}", .0.join(", "))]
    UnmatchedSubjects(Vec<String>),
    #[error("generated record {0} has no paired prompt")]
    Unpaired(String),
    #[error("insufficient candidates for subject {subject}: need {needed}, have {available}")]
    InsufficientCandidates {
        subject: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("overlap: id {0} is in both gallery and reference lists")]
    Overlap(String),
    #[error("config: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used as the prefix of CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Report(_) => "report",
            Error::InvalidArgument(_) => "argument",
            _ => "evaluation",
        }
    }
}
