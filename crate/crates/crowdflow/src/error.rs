use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: `Config` exits with 1 (usage),
/// `Invalid`/`Data`/`Io`/`Json` with 2 (data error), `Degenerate` with 3
/// (numerical degeneracy).
#[derive(Debug, Error)]
pub enum Error {
    /// An operation received input that violates its preconditions.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Configuration could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),
    /// On-disk data is missing, malformed, or inconsistent.
    #[error("data error: {0}")]
    Data(String),
    /// A solver or loss computation left the representable range.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Invalid(_) | Error::Data(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Degenerate(_) => 3,
        }
    }
}
