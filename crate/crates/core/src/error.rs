use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("term `{term}` is not in the vocabulary of {side}")]
    UnknownTerm { term: String, side: String },

    #[error("term `{term}` occurs {freq} times in {side}, below the floor of {floor}")]
    UnderFrequent { term: String, side: String, freq: u64, floor: u64 },

    #[error("zero-norm vector for `{0}` (untrained term?)")]
    ZeroNorm(String),

    #[error("no neighbour candidates with frequency >= {cf_nb} in {side}")]
    EmptyPool { side: String, cf_nb: u64 },

    #[error("no term reaches frequency {cf_shift} in both {p} and {q}")]
    NoEligibleTerms { p: String, q: String, cf_shift: u64 },

    #[error("{method} selection needs {what}")]
    MissingPrerequisite { method: &'static str, what: &'static str },

    #[error("no score for base term `{0}`")]
    MissingScore(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("stability table does not cover {} manifest terms (first: {})", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    CoverageGap(Vec<String>),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { what, detail: detail.into() }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
