use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("phase {phase} contains conflicting movements {a} and {b}")]
    ConflictingPhase { phase: usize, a: String, b: String },
    #[error("phase {0} is empty")]
    EmptyPhase(usize),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("spawn probability {p} > 1 for movement `{movement}`")]
    RateTooHigh { movement: String, p: f64 },
    #[error("unknown lane `{0}`")]
    UnknownLane(String),
    #[error("unknown movement `{0}`")]
    UnknownMovement(String),
    #[error("invalid phase index {0}")]
    InvalidPhase(usize),
    #[error("invalid action {0}")]
    InvalidAction(usize),
    #[error("environment must be reset before stepping")]
    NotReset,
    #[error("episode already truncated; call reset")]
    EpisodeOver,
    #[error("episode not complete")]
    EpisodeNotComplete,
    #[error("raster resolution {0} is below the minimum of 8")]
    BadResolution(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("observation kind `{0}` is not supported by the tabular learner")]
    UnsupportedObsKind(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
