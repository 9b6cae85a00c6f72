use thiserror::Error;

/// Errors produced by the library.
///
/// Variants split into two families: input problems (bad paths, malformed
/// data, out-of-range parameters) and computation problems (the data cannot
/// support the requested fit). [`Error::is_computation`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid treatment path: {0}")]
    InvalidPath(String),

    #[error("randomization probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cluster {cluster}: conflicting values for {field} across rows")]
    ConflictingPath { cluster: String, field: &'static str },

    #[error("duplicate cluster id {0}")]
    DuplicateCluster(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no clusters consistent with DTR {0}")]
    NoConsistentClusters(String),

    #[error("design cell {cell} ({description}) has no clusters")]
    EmptyCell { cell: char, description: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("contrast has zero estimated variance")]
    ZeroVariance,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the estimation itself, as opposed to bad input.
    pub fn is_computation(&self) -> bool {
        matches!(
            self,
            Error::NoConsistentClusters(_)
                | Error::EmptyCell { .. }
                | Error::Singular(_)
                | Error::ZeroVariance
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
