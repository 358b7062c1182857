use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input is empty")]
    Empty,
    #[error("row {row}: negative timestamp {t}")]
    NegativeTimestamp { row: usize, t: f64 },
    #[error("row {row}: expected {expected} features, found {found}")]
    RaggedFeatures { row: usize, expected: usize, found: usize },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("event at t={event_time} precedes clock {clock} of node {node}")]
    OutOfOrder { node: usize, event_time: f64, clock: f64 },
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("{mode} evaluation has no edges")]
    EmptyEvaluation { mode: &'static str },
    #[error("config: {0}")]
    Config(String),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by bad user input rather than a failure at runtime.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Empty
                | Error::NegativeTimestamp { .. }
                | Error::RaggedFeatures { .. }
                | Error::UnknownNode(_)
                | Error::InvalidArgument(_)
                | Error::EmptyEvaluation { .. }
                | Error::Config(_)
                | Error::FileNotFound(_)
                | Error::Format(_)
                | Error::Csv(_)
        )
    }
}
