use thiserror::Error;

/// Errors produced by the evaluation library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (bad gamma, empty corpus, empty gazetteer, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// The detector had nothing to score (e.g. no token passed the entropy gate).
    #[error("undetectable: {0}")]
    Undetectable(String),

    /// A judge response could not be parsed.
    #[error("parse error: {message}")]
    Parse { message: String, raw: String },

    /// A parsed value is outside its allowed range.
    #[error("validation error: {0}")]
    Validation(String),

    /// Correlation is undefined because one side has zero variance.
    #[error("undefined correlation: zero variance in {0}")]
    UndefinedCorrelation(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
