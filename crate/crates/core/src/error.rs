use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("annotation `{0}` has no source dataset")]
    NoSource(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("coverage error: no features for sample `{0}`")]
    Coverage(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("class `{0}` is absent from the home dataset")]
    MissingClass(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failing run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Schema(_) | Error::Protocol(_))
    }
}
