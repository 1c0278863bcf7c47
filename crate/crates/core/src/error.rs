use thiserror::Error;

/// Errors raised by the imaging and autofocus stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("scatterer outside cube coverage: {0}")]
    Coverage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("mixture fit failed: {0}")]
    Fit(String),

    #[error("focus failed: {0}")]
    Focus(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
