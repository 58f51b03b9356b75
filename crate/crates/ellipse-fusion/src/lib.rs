//! Fusion of location estimates with unknown cross-estimate correlations.
//!
//! Each input is a k-dimensional location estimate with a k x k covariance
//! ("ellipse"); the joint covariance across estimates is not provided. This
//! crate implements:
//!
//! * plain inverse-covariance combining (ellipse convolving), which assumes
//!   the estimates are independent,
//! * a pairwise correlation-coefficient parameterization of the joint
//!   covariance, with the entropy-maximizing coefficient `r_max` solved in
//!   closed form for 1-D, by a cubic for 2-D, and numerically in general,
//! * the mismatch diagnostics `alpha` (reported vs actual error integral)
//!   and `beta` (actual vs clairvoyant-BLUE error integral),
//! * n-estimate joint covariance assembly, the pairwise-max coefficient
//!   vector, a coordinate-ascent search for the joint maximizer, and
//!   structured per-component models with time-decay and instrument rules,
//! * four end-to-end fusion algorithms built from the above.
//!
//! The crate is `no_std` (with `alloc`); all operations are pure functions
//! over immutable inputs. IO, JSON/CSV formats and the command line live in
//! the companion `ellipse-fusion-cli` crate.
//!
//! ```
//! use ellipse_fusion::nalgebra::dvector;
//! use ellipse_fusion::{fusion, Estimate, SymMatrix};
//!
//! let a = Estimate::new(dvector![0.0], SymMatrix::from_diagonal(&[1.0]).unwrap()).unwrap();
//! let b = Estimate::new(dvector![1.0], SymMatrix::from_diagonal(&[4.0]).unwrap()).unwrap();
//!
//! // Convolving trusts independence; the max-entropy combine does not.
//! let convolved = fusion::fuse_convolve(&[a.clone(), b.clone()]).unwrap();
//! let cautious = fusion::fuse_max_entropy(&[a, b], fusion::MaxEntropyMode::PairwiseMax).unwrap();
//! assert!(cautious.covariance[(0, 0)] > convolved.covariance[(0, 0)]);
//! ```

#![no_std]

#[cfg_attr(test, macro_use)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod correlation;
pub mod error;
pub mod fusion;
pub mod gls;
pub mod joint;
pub mod linalg;
pub mod pairwise;
pub mod sample;

mod util;

pub use correlation::CorrelationVector;
pub use error::Error;
pub use gls::{Estimate, FusionMethod, FusionResult, StackedSystem};
pub use linalg::{PsdReport, SymMatrix};
pub use pairwise::{PairwiseGeometry, RmaxMethod, RmaxResult};

/// Crate-wide result type.
pub type Result<T> = core::result::Result<T, Error>;

// Re-exported so downstream users build vectors/matrices against the same
// nalgebra version.
pub use nalgebra;
