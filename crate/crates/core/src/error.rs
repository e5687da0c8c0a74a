use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model has no edges")]
    EdgelessModel,

    #[error("n = {n} is too large for exhaustive enumeration (limit {limit})")]
    TooLargeForEnumeration { n: usize, limit: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("node {node} has no updates in the sample set")]
    NoUpdates { node: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("oracle failure in round {round}: {message}")]
    Oracle { round: usize, message: String },

    #[error("no sample size up to m_max = {m_max} met the success criterion")]
    SearchExhausted { m_max: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
