use thiserror::Error;

/// Errors raised by ingestion, estimation and prediction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {file} (record {record}): {message}")]
    Parse {
        file: String,
        record: usize,
        message: String,
    },
    #[error("duplicate observation for time {time} and location {id}")]
    DuplicateCell { time: String, id: String },
    #[error("unknown location id {0:?}")]
    UnknownLocation(String),
    #[error("invalid location set: {0}")]
    InvalidLocations(String),
    #[error("invalid coordinate for location {id}: {reason}")]
    InvalidCoordinate { id: String, reason: String },
    #[error("frame too sparse: {0}")]
    TooSparse(String),
    #[error("need at least {required} locations, got {got}")]
    TooFewLocations { required: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing observations in columns used by {0}")]
    MissingData(&'static str),
    #[error("lag {lag} too large for n = {n} (need 2 * lag < n)")]
    LagTooLarge { lag: usize, n: usize },
    #[error("locations {0} and {1} share fewer than 2 jointly observed times")]
    InsufficientOverlap(usize, usize),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("need at least {required} eigenvalues, got {got}")]
    TooFewEigenvalues { required: usize, got: usize },
    #[error("matrix is rank deficient")]
    RankDeficient,
    #[error("block size {q} too large for {p} locations (need 4 <= 2q <= p)")]
    BlockTooLarge { q: usize, p: usize },
    #[error("singular design matrix at location {0}")]
    SingularDesign(String),
    #[error("no location carries positive kernel weight at ({0}, {1})")]
    EmptyKernelWindow(f64, f64),
    #[error("sample covariance is not invertible")]
    NonInvertible,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("singular block in partitioned inverse: {0}")]
    SingularBlock(&'static str),
    #[error("singular innovation covariance at recursion step {0}")]
    SingularInnovation(usize),
    #[error("period {period} too large for n = {n}")]
    PeriodTooLarge { period: usize, n: usize },
}

impl Error {
    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InsufficientOverlap(..)
                | Error::NotSymmetric(_)
                | Error::TooFewEigenvalues { .. }
                | Error::RankDeficient
                | Error::SingularDesign(_)
                | Error::EmptyKernelWindow(..)
                | Error::NonInvertible
                | Error::NotPositiveDefinite
                | Error::SingularBlock(_)
                | Error::SingularInnovation(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
