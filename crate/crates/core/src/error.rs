use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate points: rows {0} and {1} coincide (first-neighbor distance is zero)")]
    DuplicatePoints(usize, usize),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("non-finite log-posterior at sweep {sweep}")]
    NonFiniteLogPosterior { sweep: usize },

    #[error("traces come from different datasets ({0} vs {1})")]
    MismatchedData(String, String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("manifolds {a} and {b} are too close: gap {gap:.6} < required {required:.6}")]
    SeparationViolated {
        a: usize,
        b: usize,
        gap: f64,
        required: f64,
    },

    #[error("ball height is flat over the play; no shot release can be located")]
    FlatTrajectory,

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("{0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
