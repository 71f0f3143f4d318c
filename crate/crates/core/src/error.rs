use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LamaError>;

#[derive(Debug, Error)]
pub enum LamaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-numeric feature value {value:?} at row {row}, column {column}")]
    NonNumeric { row: usize, column: usize, value: String },

    #[error("label column {0} not found")]
    MissingLabelColumn(String),

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },

    #[error("need at least {required} inliers and {required} outliers, found {inliers} and {outliers}")]
    InsufficientClasses {
        inliers: usize,
        outliers: usize,
        required: usize,
    },

    #[error("dataset has {0} observations, at least 4 are required")]
    TooFewObservations(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel matrix is already centered")]
    AlreadyCentered,

    #[error("SVDD needs the uncentered Gram matrix")]
    CenteredKernel,

    #[error("cost {cost} is infeasible, the dual needs C >= 1/N = {min}")]
    InfeasibleCost { cost: f64, min: f64 },

    #[error("alignment mask is empty")]
    EmptyMask,

    #[error("observation {0} is already labeled")]
    AlreadyLabeled(usize),

    #[error("observation {0} is out of range")]
    UnknownObservation(usize),

    #[error("no unlabeled observations left")]
    EmptyPool,

    #[error("labeled set must contain both inliers and outliers")]
    SingleClassLabels,

    #[error("no query is pending")]
    NoPendingQuery,

    #[error("answer for {answered} does not match pending query {pending}")]
    StaleAnswer { answered: usize, pending: usize },

    #[error("session is still running; finalize it or spend the budget first")]
    SessionInProgress,
}

impl LamaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LamaError::Io {
            path: path.into(),
            source,
        }
    }
}
