use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported scenario: {0}")]
    UnsupportedScenario(String),

    #[error("singular geometry: sensor coincides with anchor {anchor} (1-based)")]
    SingularGeometry { anchor: usize },

    #[error(
        "degenerate ranging row {row} (1-based): |d| = {value:e} is below the clamp {clamp:e}"
    )]
    DegenerateRow { row: usize, value: f64, clamp: f64 },

    #[error("Fisher information is singular or ill-conditioned (condition {condition:e})")]
    UnboundedBound { condition: f64 },

    #[error("nonlinear least-squares oracle failed: every start diverged")]
    OracleFailure,

    #[error("trial {trial}: no admissible sensor position after {attempts} draws")]
    SamplingExhausted { trial: u64, attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
