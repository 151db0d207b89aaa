use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An allocation entry vanished, so the level could never be sampled.
    #[error("degenerate allocation: q[{level}] = 0 (theta = {theta})")]
    DegenerateAllocation { level: usize, theta: f64 },

    #[error("sample size {requested:.3e} exceeds the cap {cap:.3e}")]
    SampleSizeOverflow { requested: f64, cap: f64 },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("sampler failed at level {level}, draw {draw}: {message}")]
    Sampler {
        level: usize,
        draw: u64,
        message: String,
    },

    #[error("non-finite value at level {level}, draw {draw}: fine = {fine}, coarse = {coarse:?}")]
    NonFinite {
        level: usize,
        draw: u64,
        fine: f64,
        coarse: Option<f64>,
    },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient pilot: estimate {estimate:.6e} has standard error {std_error:.6e}")]
    InsufficientPilot { estimate: f64, std_error: f64 },

    #[error("projected cost {projected:.3e} exceeds the budget {budget:.3e}")]
    BudgetExceeded { projected: f64, budget: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
