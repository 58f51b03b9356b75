//! Pairwise correlation coefficient vectors.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::PsdReport;
use crate::Result;

/// The n(n-1)/2 pairwise cross-correlation coefficients of an n-estimate
/// joint covariance, stored row-major over pairs `(i, j)` with `i < j`:
/// `(0,1), (0,2), ..., (0,n-1), (1,2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVector {
    n: usize,
    values: Vec<f64>,
    feasible: Option<PsdReport>,
}

impl CorrelationVector {
    /// Number of coefficients for `n` estimates.
    pub fn len_for(n: usize) -> usize {
        n * (n - 1) / 2
    }

    /// All-zero coefficients (the independence model).
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter { what: "need at least one estimate" });
        }
        Ok(Self { n, values: alloc::vec![0.0; Self::len_for(n)], feasible: None })
    }

    /// Builds from a flat coefficient slice; every value must be finite and
    /// in `[-1, 1]`.
    pub fn from_values(n: usize, values: &[f64]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter { what: "need at least one estimate" });
        }
        if values.len() != Self::len_for(n) {
            return Err(Error::DimensionMismatch {
                expected: Self::len_for(n),
                found: values.len(),
            });
        }
        for &v in values {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::CoefficientOutOfRange { value: v });
            }
        }
        Ok(Self { n, values: values.to_vec(), feasible: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat index of the pair `(i, j)`; order-insensitive.
    pub fn index_of(&self, i: usize, j: usize) -> usize {
        assert!(i != j && i < self.n && j < self.n, "pair indices out of range");
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index_of(i, j)]
    }

    /// Sets one coefficient; rejects values outside `[-1, 1]`. Clears any
    /// cached feasibility report.
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if !value.is_finite() || value.abs() > 1.0 {
            return Err(Error::CoefficientOutOfRange { value });
        }
        let idx = self.index_of(i, j);
        self.values[idx] = value;
        self.feasible = None;
        Ok(())
    }

    /// Cached feasibility report of the induced joint covariance, if any.
    pub fn feasibility(&self) -> Option<&PsdReport> {
        self.feasible.as_ref()
    }

    pub(crate) fn set_feasibility(&mut self, report: PsdReport) {
        self.feasible = Some(report);
    }

    /// Iterates pairs `(i, j, r_ij)` in storage order.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
            .zip(self.values.iter())
            .map(|((i, j), &r)| (i, j, r))
    }
}
