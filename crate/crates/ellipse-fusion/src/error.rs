//! Error type shared by all fusion operations.

use core::fmt;

use crate::linalg::PsdReport;

/// Errors produced by matrix kernels, estimators and fusion algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A square matrix was expected.
    NotSquare { rows: usize, cols: usize },
    /// An input contained NaN or infinite entries.
    NonFinite,
    /// Vector or matrix dimensions do not agree.
    DimensionMismatch { expected: usize, found: usize },
    /// A symmetric positive definite matrix was required.
    NotPositiveDefinite { min_eigenvalue: f64 },
    /// A positive semidefinite matrix was required.
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    /// The accumulated information matrix is singular; no estimate exists.
    InsufficientInformation,
    /// The weight model `S - r_p Z` is singular or indefinite.
    SingularWeightModel { min_eigenvalue: f64 },
    /// A correlation coefficient lies outside its admissible range.
    CoefficientOutOfRange { value: f64 },
    /// The assembled joint covariance does not admit a positive definite
    /// solution covariance.
    Infeasible { report: PsdReport },
    /// A scalar weight denominator vanished (equal variances at r = 1).
    ZeroDenominator,
    /// An estimate is missing the timestamp required by a time-decay rule.
    MissingTimestamp { index: usize },
    /// An estimate is missing the instrument tag required by a grouping rule.
    MissingInstrument { index: usize },
    /// An estimate is missing the covariance components required by a
    /// structured model.
    MissingComponents { index: usize },
    /// Covariance components do not sum to the estimate covariance.
    ComponentSumMismatch { index: usize, relative_error: f64 },
    /// A parameter fails basic validation.
    InvalidParameter { what: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotSquare { rows, cols } => {
                write!(f, "expected a square matrix, got {rows}x{cols}")
            }
            Error::NonFinite => write!(f, "input contains non-finite entries"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NotPositiveDefinite { min_eigenvalue } => write!(
                f,
                "matrix is not positive definite (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::NotPositiveSemidefinite { min_eigenvalue } => write!(
                f,
                "matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::InsufficientInformation => {
                write!(f, "information matrix is singular; estimate is undetermined")
            }
            Error::SingularWeightModel { min_eigenvalue } => write!(
                f,
                "weight model S - r_p Z is not positive definite (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::CoefficientOutOfRange { value } => {
                write!(f, "correlation coefficient {value} out of range")
            }
            Error::Infeasible { report } => write!(
                f,
                "joint covariance infeasible (min eigenvalue {:e})",
                report.min_eigenvalue
            ),
            Error::ZeroDenominator => write!(f, "scalar weight denominator is zero"),
            Error::MissingTimestamp { index } => {
                write!(f, "estimate {index} has no timestamp")
            }
            Error::MissingInstrument { index } => {
                write!(f, "estimate {index} has no instrument tag")
            }
            Error::MissingComponents { index } => {
                write!(f, "estimate {index} has no covariance components")
            }
            Error::ComponentSumMismatch { index, relative_error } => write!(
                f,
                "components of estimate {index} do not sum to its covariance (relative error {relative_error:e})"
            ),
            Error::InvalidParameter { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for Error {}
