//! Dense symmetric-matrix primitives.
//!
//! Everything in this crate works on small dense matrices (location
//! covariances, typically k <= 16, and their nk x nk joint assemblies).
//! The kernels here wrap eigendecompositions of symmetric matrices:
//! positive-semidefiniteness checks, principal square roots, pseudo-inverses,
//! adjugates and the Gaussian differential entropy.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// f64 math lives in libm for no_std builds; std's inherent methods
// shadow the trait under cfg(test), hence the allow.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Error;
use crate::Result;

/// A square real matrix kept exactly symmetric.
///
/// Construction symmetrizes the input as `(M + M^T) / 2`, so user data that
/// is symmetric only up to its last printed digit is accepted, and all
/// downstream kernels can rely on `m[(i, j)] == m[(j, i)]` bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from an arbitrary square matrix.
    ///
    /// Fails if the matrix is not square, is empty, or carries non-finite
    /// entries.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidParameter { what: "matrix dimension must be at least 1" });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { m: symmetrize(m) })
    }

    /// Builds from row-major entries.
    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: entries.len() });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    /// Builds a diagonal matrix.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    /// Wraps a matrix that is already known to be square and finite.
    /// Still symmetrized, so rounding asymmetry from products cannot leak out.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self { m: symmetrize(m) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { m: &self.m * factor }
    }

    /// `a * ma + b * mb`, exploiting that the combination stays symmetric.
    pub fn linear_comb(a: f64, ma: &SymMatrix, b: f64, mb: &SymMatrix) -> Self {
        debug_assert_eq!(ma.dim(), mb.dim());
        Self { m: &ma.m * a + &mb.m * b }
    }

    /// Eigenvalues of the matrix (unordered).
    pub fn eigenvalues(&self) -> DVector<f64> {
        self.m.clone().symmetric_eigen().eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    /// Determinant via LU.
    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    /// Log-determinant of a positive definite matrix.
    pub fn log_det_pd(&self) -> Result<f64> {
        let vals = self.eigenvalues();
        let min = vals.min();
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(vals.iter().map(|v| v.ln()).sum())
    }

    /// Inverse of a symmetric positive definite matrix, computed spectrally
    /// so the result is symmetric by construction.
    pub fn inverse_spd(&self) -> Result<SymMatrix> {
        let eig = self.m.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let tol = default_psd_tol(self.dim(), eig.eigenvalues.max());
        if min <= tol {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(Self::from_symmetric_unchecked(spectral_map(&eig, |l| 1.0 / l)))
    }
}

impl core::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.m[idx]
    }
}

impl core::ops::Add<&SymMatrix> for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix { m: &self.m + &rhs.m }
    }
}

impl core::ops::Sub<&SymMatrix> for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix { m: &self.m - &rhs.m }
    }
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Outcome of a positive-semidefiniteness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub is_psd: bool,
    pub is_pd: bool,
    pub min_eigenvalue: f64,
    pub tolerance_used: f64,
}

/// Default spectral tolerance: `dim * eps * max(1, lambda_max)`.
pub fn default_psd_tol(dim: usize, lambda_max: f64) -> f64 {
    dim as f64 * f64::EPSILON * f64::max(1.0, lambda_max.abs())
}

/// Classifies a symmetric matrix as positive (semi)definite from its
/// eigenvalue spectrum. `tol` is an absolute eigenvalue tolerance; when
/// omitted the relative default of [`default_psd_tol`] is used.
pub fn check_psd(m: &SymMatrix, tol: Option<f64>) -> PsdReport {
    let vals = m.eigenvalues();
    let min = vals.min();
    let max = vals.max();
    let tolerance_used = tol.map(|t| t.max(0.0)).unwrap_or_else(|| default_psd_tol(m.dim(), max));
    PsdReport {
        is_psd: min >= -tolerance_used,
        is_pd: min > tolerance_used,
        min_eigenvalue: min,
        tolerance_used,
    }
}

fn spectral_map(
    eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>,
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let mapped = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Principal square root of a symmetric positive definite matrix.
pub fn spd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = m.as_matrix().clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= default_psd_tol(m.dim(), eig.eigenvalues.max()) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(SymMatrix::from_symmetric_unchecked(spectral_map(&eig, |l| l.sqrt())))
}

/// Principal square root of the (generally non-symmetric) product `E1 * E2`
/// of two symmetric positive definite matrices.
///
/// Computed through the similarity construction
/// `E1^{1/2} * sqrt(E1^{1/2} E2 E1^{1/2}) * E1^{-1/2}`, which keeps the
/// spectrum real and positive and satisfies `N * N = E1 * E2` as well as the
/// Schur cancellation `N E2^{-1} N^T = E1`.
pub fn spd_product_sqrt(e1: &SymMatrix, e2: &SymMatrix) -> Result<DMatrix<f64>> {
    if e1.dim() != e2.dim() {
        return Err(Error::DimensionMismatch { expected: e1.dim(), found: e2.dim() });
    }
    let eig1 = e1.as_matrix().clone().symmetric_eigen();
    let min1 = eig1.eigenvalues.min();
    if min1 <= default_psd_tol(e1.dim(), eig1.eigenvalues.max()) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min1 });
    }
    let e1_half = spectral_map(&eig1, |l| l.sqrt());
    let e1_half_inv = spectral_map(&eig1, |l| 1.0 / l.sqrt());
    let inner = SymMatrix::from_symmetric_unchecked(&e1_half * e2.as_matrix() * &e1_half);
    // inner is congruent to E2, so positive definiteness transfers.
    let inner_sqrt = spd_sqrt(&inner)?;
    Ok(e1_half * inner_sqrt.as_matrix() * e1_half_inv)
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `tol * lambda_max` map to zero and the rest invert;
/// `tol` defaults to `dim * eps`. An indefinite input is rejected.
pub fn pseudo_inverse(m: &SymMatrix, tol: Option<f64>) -> Result<SymMatrix> {
    let eig = m.as_matrix().clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cutoff = match tol {
        Some(t) => t.max(0.0) * f64::max(max, 0.0),
        None => default_psd_tol(m.dim(), max),
    };
    if min < -cutoff {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    Ok(SymMatrix::from_symmetric_unchecked(spectral_map(&eig, |l| {
        if l > cutoff {
            1.0 / l
        } else {
            0.0
        }
    })))
}

/// Adjugate matrix: the transpose of the cofactor matrix, satisfying
/// `M * adj(M) = det(M) * I` for any square `M`, singular included.
///
/// Closed forms handle `dim <= 3`; larger matrices go through the singular
/// value decomposition, which stays exact for rank-deficient inputs where a
/// `det * inverse` shortcut would not.
pub fn adjugate(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let n = m.nrows();
    match n {
        0 => Err(Error::InvalidParameter { what: "matrix dimension must be at least 1" }),
        1 => Ok(DMatrix::from_element(1, 1, 1.0)),
        2 => Ok(DMatrix::from_row_slice(
            2,
            2,
            &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]],
        )),
        3 => {
            let mut adj = DMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    // adj[j][i] is the (i, j) cofactor; the cyclic row/column
                    // ordering absorbs the (-1)^(i+j) sign.
                    let r = [(i + 1) % 3, (i + 2) % 3];
                    let c = [(j + 1) % 3, (j + 2) % 3];
                    adj[(j, i)] =
                        m[(r[0], c[0])] * m[(r[1], c[1])] - m[(r[0], c[1])] * m[(r[1], c[0])];
                }
            }
            Ok(adj)
        }
        _ => {
            let svd = m.clone().svd(true, true);
            let u = svd.u.as_ref().expect("svd requested u");
            let v_t = svd.v_t.as_ref().expect("svd requested v_t");
            let sigma = &svd.singular_values;
            // prefix[i] = product of sigma[..i], suffix[i] = product of sigma[i+1..]
            let mut prefix = Vec::with_capacity(n + 1);
            prefix.push(1.0);
            for i in 0..n {
                let last = *prefix.last().expect("non-empty");
                prefix.push(last * sigma[i]);
            }
            let mut suffix = alloc::vec![1.0; n + 1];
            for i in (0..n).rev() {
                suffix[i] = suffix[i + 1] * sigma[i];
            }
            let excl = DVector::from_iterator(n, (0..n).map(|i| prefix[i] * suffix[i + 1]));
            let sign_u = if u.determinant() < 0.0 { -1.0 } else { 1.0 };
            let sign_v = if v_t.determinant() < 0.0 { -1.0 } else { 1.0 };
            Ok(sign_u * sign_v * v_t.transpose() * DMatrix::from_diagonal(&excl) * u.transpose())
        }
    }
}

/// Nearest positive semidefinite matrix in the spectral sense: negative
/// eigenvalues clip to zero. Used to repair inputs accepted under a loose
/// tolerance before they reach kernels with strict PSD preconditions.
pub fn project_psd(m: &SymMatrix) -> SymMatrix {
    let eig = m.as_matrix().clone().symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return m.clone();
    }
    SymMatrix::from_symmetric_unchecked(spectral_map(&eig, |l| l.max(0.0)))
}

/// Differential entropy of a Gaussian with covariance `p`:
/// `k/2 + (k/2) ln(2 pi) + (1/2) ln|P|`.
pub fn gaussian_entropy(p: &SymMatrix) -> Result<f64> {
    let log_det = p.log_det_pd()?;
    let k = p.dim() as f64;
    Ok(0.5 * k + 0.5 * k * (2.0 * core::f64::consts::PI).ln() + 0.5 * log_det)
}
