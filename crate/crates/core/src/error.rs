use thiserror::Error;

use crate::gee::GeeFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("cannot parse value in row {row}, column `{col}`")]
    UnparseableValue { row: usize, col: String },

    #[error("cluster `{0}` has repeated within-subject positions")]
    DuplicateWithinPosition(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("factor `{0}` has a single observed level")]
    ConstantFactor(String),

    #[error("missing value for `{0}`; drop incomplete rows before coding")]
    MissingValue(String),

    #[error("response `{0}` is not binary")]
    NonBinaryResponse(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value {value} outside the mean space of {what}")]
    DomainError { what: &'static str, value: f64 },

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("fitted means hit the 0/1 boundary (perfect separation)")]
    PerfectSeparation,

    #[error("no convergence after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        /// Last iterate, when the solver got far enough to produce one.
        partial: Option<Box<GeeFit>>,
    },

    #[error("correlation parameter {0} outside (-1, 1)")]
    InvalidAlpha(f64),

    #[error("cluster size {size} exceeds the {template}x{template} correlation template")]
    SizeExceedsTemplate { size: usize, template: usize },

    #[error("no within-cluster pairs to estimate correlation from")]
    NoPairs,

    #[error("negative variance {0} on covariance diagonal")]
    NegativeVariance(f64),

    #[error("confidence level {0} not in (0, 1)")]
    InvalidLevel(f64),

    #[error("division by zero")]
    DivisionByZero,

    #[error("odds ratio undefined (b*c = 0)")]
    UndefinedOR,

    #[error("every candidate model failed to fit")]
    AllCandidatesFailed,

    #[error("requested correlation {alpha} exceeds the attainable bound {bound:.4}")]
    InfeasibleCorrelation { alpha: f64, bound: f64 },

    #[error("invalid simulation profile: {0}")]
    InvalidProfile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
