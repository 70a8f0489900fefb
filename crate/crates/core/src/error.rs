use thiserror::Error;

/// Errors raised by fitting, estimation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// No counts were supplied where at least one is required.
    #[error("no counts supplied")]
    EmptyCounts,

    #[error("empty grid")]
    EmptyGrid,

    /// Every grid atom assigns zero probability to some observed count.
    #[error("likelihood is not finite: count {count} is impossible under every grid atom")]
    NonFiniteLikelihood { count: u64 },

    /// Every atom was below the pruning floor.
    #[error("all {atoms} atoms fall below the weight floor {floor:e}")]
    AllPruned { atoms: usize, floor: f64 },

    /// The support-size search reached the upper end of its bracket.
    #[error("support-size search hit the bracket limit k' = {limit}")]
    SupportBoundReached { limit: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
