//! Generalized least squares over stacked location estimates.
//!
//! The model is `y = A x + e` with `A` a column stack of n identity blocks,
//! so a weighted solve reduces to block accumulation: `A^T W A` is the sum of
//! all k x k blocks of `W` and never requires materializing `A`.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// f64 math lives in libm for no_std builds; std's inherent methods
// shadow the trait under cfg(test), hence the allow.
#[allow(unused_imports)]
use num_traits::Float;

use crate::correlation::CorrelationVector;
use crate::error::Error;
use crate::linalg::{check_psd, gaussian_entropy, pseudo_inverse, SymMatrix};
use crate::Result;

/// One location estimate: a k-vector with its covariance and optional
/// metadata used by the structured fusion models.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    y: DVector<f64>,
    covariance: SymMatrix,
    time: Option<f64>,
    components: Option<Vec<SymMatrix>>,
    instrument: Option<String>,
}

impl Estimate {
    /// A new estimate; the covariance must be positive semidefinite and match
    /// the vector dimension.
    pub fn new(y: DVector<f64>, covariance: SymMatrix) -> Result<Self> {
        Self::new_with_tol(y, covariance, None)
    }

    /// Like [`Estimate::new`] with an explicit eigenvalue tolerance for the
    /// positive-semidefiniteness gate.
    pub fn new_with_tol(y: DVector<f64>, covariance: SymMatrix, tol: Option<f64>) -> Result<Self> {
        if y.len() != covariance.dim() {
            return Err(Error::DimensionMismatch { expected: covariance.dim(), found: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let report = check_psd(&covariance, tol);
        if !report.is_psd {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: report.min_eigenvalue,
            });
        }
        Ok(Self { y, covariance, time: None, components: None, instrument: None })
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = Some(time);
        self
    }

    pub fn with_instrument(mut self, instrument: String) -> Self {
        self.instrument = Some(instrument);
        self
    }

    /// Attaches covariance components `B_0 .. B_m`. Each must be positive
    /// semidefinite and they must sum to the covariance within a 1e-9
    /// relative tolerance.
    pub fn with_components(mut self, components: Vec<SymMatrix>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter { what: "component list must not be empty" });
        }
        let k = self.covariance.dim();
        let mut sum = DMatrix::zeros(k, k);
        for comp in &components {
            if comp.dim() != k {
                return Err(Error::DimensionMismatch { expected: k, found: comp.dim() });
            }
            let report = check_psd(comp, None);
            if !report.is_psd {
                return Err(Error::NotPositiveSemidefinite {
                    min_eigenvalue: report.min_eigenvalue,
                });
            }
            sum += comp.as_matrix();
        }
        let scale = self.covariance.as_matrix().norm().max(1.0);
        let relative_error = (&sum - self.covariance.as_matrix()).norm() / scale;
        if relative_error > 1e-9 {
            return Err(Error::ComponentSumMismatch { index: 0, relative_error });
        }
        self.components = Some(components);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn components(&self) -> Option<&[SymMatrix]> {
        self.components.as_deref()
    }

    pub fn instrument(&self) -> Option<&str> {
        self.instrument.as_deref()
    }
}

/// The stacked system `y = A x + e` for n estimates of dimension k.
/// The design matrix (a stack of identity blocks) is implicit.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    k: usize,
    ys: Vec<DVector<f64>>,
}

impl StackedSystem {
    pub fn from_estimates(estimates: &[Estimate]) -> Result<Self> {
        let ys: Vec<DVector<f64>> = estimates.iter().map(|e| e.y().clone()).collect();
        let k = match ys.first() {
            Some(y) => y.len(),
            None => return Err(Error::InvalidParameter { what: "need at least one estimate" }),
        };
        Self::from_vectors(k, ys)
    }

    pub fn from_vectors(k: usize, ys: Vec<DVector<f64>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter { what: "dimension must be at least 1" });
        }
        if ys.is_empty() {
            return Err(Error::InvalidParameter { what: "need at least one estimate" });
        }
        for y in &ys {
            if y.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: y.len() });
            }
        }
        Ok(Self { k, ys })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn y(&self, i: usize) -> &DVector<f64> {
        &self.ys[i]
    }

    /// The stacked nk-vector.
    pub fn stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n() * self.k);
        for (i, y) in self.ys.iter().enumerate() {
            out.rows_mut(i * self.k, self.k).copy_from(y);
        }
        out
    }

    /// Materializes the nk x k design matrix (for tests and diagnostics).
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n() * self.k, self.k);
        for i in 0..self.n() {
            a.view_mut((i * self.k, 0), (self.k, self.k))
                .copy_from(&DMatrix::identity(self.k, self.k));
        }
        a
    }
}

/// Which algorithm produced a fusion result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMethod {
    Gls,
    Convolve,
    MaxEntropy,
    MaxEntropyPm,
    ConvolveInflated,
    Structured,
}

impl FusionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMethod::Gls => "gls",
            FusionMethod::Convolve => "convolve",
            FusionMethod::MaxEntropy => "max-entropy",
            FusionMethod::MaxEntropyPm => "max-entropy-pm",
            FusionMethod::ConvolveInflated => "convolve-inflated",
            FusionMethod::Structured => "structured",
        }
    }
}

impl core::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fused estimate with its reported covariance and diagnostics.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub x_hat: DVector<f64>,
    pub covariance: SymMatrix,
    pub method: FusionMethod,
    /// Per-estimate weight blocks of the linear combiner, when the method
    /// yields them; they sum to the identity.
    pub weights: Option<Vec<DMatrix<f64>>>,
    pub entropy: f64,
    /// Pairwise coefficient vectors used to parameterize the joint
    /// covariance: one entry per covariance component (a single entry for the
    /// unstructured methods), `None` for plain convolving / raw GLS.
    pub coefficients: Option<Vec<CorrelationVector>>,
}

/// Sum of all k x k blocks of `w`, i.e. `A^T W A` for the identity-stack
/// design matrix.
pub(crate) fn information_matrix(w: &SymMatrix, n: usize, k: usize) -> SymMatrix {
    let mut sum = DMatrix::zeros(k, k);
    for i in 0..n {
        for j in 0..n {
            sum += w.as_matrix().view((i * k, j * k), (k, k));
        }
    }
    SymMatrix::from_symmetric_unchecked(sum)
}

/// Per-column block sums of `w`: entry `j` is `sum_i W_ij`, the j-th block of
/// `A^T W` (equivalently of `W A`, transposed, since `W` is symmetric).
fn column_block_sums(w: &SymMatrix, n: usize, k: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|j| {
            let mut sum = DMatrix::zeros(k, k);
            for i in 0..n {
                sum += w.as_matrix().view((i * k, j * k), (k, k));
            }
            sum
        })
        .collect()
}

fn check_weight_dims(sys: &StackedSystem, w: &SymMatrix) -> Result<()> {
    let nk = sys.n() * sys.k();
    if w.dim() != nk {
        return Err(Error::DimensionMismatch { expected: nk, found: w.dim() });
    }
    Ok(())
}

/// Weighted least squares `x = (A^T W A)^{-1} A^T W y` with the
/// self-consistent reported covariance `P = (A^T W A)^{-1}`.
pub fn gls_solve(sys: &StackedSystem, w: &SymMatrix) -> Result<FusionResult> {
    check_weight_dims(sys, w)?;
    let (n, k) = (sys.n(), sys.k());
    let info = information_matrix(w, n, k);
    let p = info.inverse_spd().map_err(|_| Error::InsufficientInformation)?;
    let col_sums = column_block_sums(w, n, k);
    let mut atwy = DVector::zeros(k);
    for (j, block) in col_sums.iter().enumerate() {
        atwy += block * sys.y(j);
    }
    let x_hat = p.as_matrix() * atwy;
    let weights: Vec<DMatrix<f64>> =
        col_sums.iter().map(|block| p.as_matrix() * block).collect();
    let entropy = gaussian_entropy(&p)?;
    Ok(FusionResult {
        x_hat,
        covariance: p,
        method: FusionMethod::Gls,
        weights: Some(weights),
        entropy,
        coefficients: None,
    })
}

/// The sandwich covariance
/// `P(W, R) = (A^T W A)^{-1} A^T W R W A (A^T W A)^{-1}`:
/// the actual covariance of the weighted combine when the truth is `R`.
pub fn power_covariance(sys: &StackedSystem, w: &SymMatrix, r: &SymMatrix) -> Result<SymMatrix> {
    check_weight_dims(sys, w)?;
    check_weight_dims(sys, r)?;
    let (n, k) = (sys.n(), sys.k());
    let info = information_matrix(w, n, k);
    let p = info.inverse_spd().map_err(|_| Error::InsufficientInformation)?;
    let col_sums = column_block_sums(w, n, k);
    let mut mid = DMatrix::zeros(k, k);
    for i in 0..n {
        for j in 0..n {
            let r_block = r.as_matrix().view((i * k, j * k), (k, k));
            mid += &col_sums[i] * r_block * col_sums[j].transpose();
        }
    }
    Ok(SymMatrix::from_symmetric_unchecked(p.as_matrix() * mid * p.as_matrix()))
}

fn log_det_ratio_half(p_actual: &SymMatrix, log_det_ref: f64) -> f64 {
    // |P| of a PSD sandwich can round to zero; treat that as alpha/beta = 0.
    let vals = p_actual.eigenvalues();
    if vals.min() <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let log_det: f64 = vals.iter().map(|v| v.ln()).sum();
    0.5 * (log_det - log_det_ref)
}

/// `alpha(W, R) = sqrt(|P(W,R)| / |P(W,W^{-1})|)`: how many times bigger the
/// actual error integral is than the one reported alongside the weights.
pub fn alpha_metric(sys: &StackedSystem, w: &SymMatrix, r: &SymMatrix) -> Result<f64> {
    let p_actual = power_covariance(sys, w, r)?;
    let info = information_matrix(w, sys.n(), sys.k());
    // P(W, W^{-1}) = (A^T W A)^{-1}
    let log_det_reported = -info.log_det_pd().map_err(|_| Error::InsufficientInformation)?;
    Ok(log_det_ratio_half(&p_actual, log_det_reported).exp())
}

/// `beta(W, R) = sqrt(|P(W,R)| / |P(R^{-1},R)|)`: how many times bigger the
/// actual error integral is than the clairvoyant BLUE's. Always >= 1.
pub fn beta_metric(sys: &StackedSystem, w: &SymMatrix, r: &SymMatrix) -> Result<f64> {
    let p_actual = power_covariance(sys, w, r)?;
    let w_blue = pseudo_inverse(r, None)?;
    let info_blue = information_matrix(&w_blue, sys.n(), sys.k());
    let log_det_blue = -info_blue.log_det_pd().map_err(|_| Error::InsufficientInformation)?;
    Ok(log_det_ratio_half(&p_actual, log_det_blue).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{random_spd, random_vector};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym(dim: usize, entries: &[f64]) -> SymMatrix {
        SymMatrix::from_row_slice(dim, entries).unwrap()
    }

    fn scalar_pair_sys() -> StackedSystem {
        StackedSystem::from_vectors(1, alloc::vec![dvector![2.0], dvector![6.0]]).unwrap()
    }

    #[test]
    fn single_estimate_passthrough() {
        let sys = StackedSystem::from_vectors(1, alloc::vec![dvector![3.0]]).unwrap();
        let w = sym(1, &[0.25]); // E = 4
        let res = gls_solve(&sys, &w).unwrap();
        assert_relative_eq!(res.x_hat[0], 3.0, max_relative = 1e-12);
        assert_relative_eq!(res.covariance[(0, 0)], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn scalar_harmonic_sum() {
        let sys = scalar_pair_sys();
        let w = sym(2, &[1.0, 0.0, 0.0, 0.25]);
        let res = gls_solve(&sys, &w).unwrap();
        assert_relative_eq!(res.covariance[(0, 0)], 0.8, max_relative = 1e-12);
        assert_relative_eq!(res.x_hat[0], (2.0 + 6.0 / 4.0) / 1.25, max_relative = 1e-12);
    }

    #[test]
    fn equal_covariance_means() {
        let sys = scalar_pair_sys();
        let w = sym(2, &[0.5, 0.0, 0.0, 0.5]);
        let res = gls_solve(&sys, &w).unwrap();
        assert_relative_eq!(res.x_hat[0], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn power_covariance_scalar_cases() {
        let sys = scalar_pair_sys();
        let w = sym(2, &[1.0, 0.0, 0.0, 0.25]);
        // matched: R = W^{-1}
        let r = sym(2, &[1.0, 0.0, 0.0, 4.0]);
        let p = power_covariance(&sys, &w, &r).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.8, max_relative = 1e-12);

        // true cross-correlation 0.5: off-diagonal sigma1*sigma2*r = 1
        let r = sym(2, &[1.0, 1.0, 1.0, 4.0]);
        let p = power_covariance(&sys, &w, &r).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.12, max_relative = 1e-12);
    }

    #[test]
    fn power_covariance_matches_blue_formula() {
        // BLUE consistency: P(R^{-1}, R) == (A^T R^{-1} A)^{-1}.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(1..5usize);
            let k = rng.random_range(1..4usize);
            let r = random_spd(&mut rng, n * k, 0.1, 10.0);
            let ys = (0..n).map(|_| random_vector(&mut rng, k, 3.0)).collect();
            let sys = StackedSystem::from_vectors(k, ys).unwrap();
            let w = r.inverse_spd().unwrap();
            let p = power_covariance(&sys, &w, &r).unwrap();
            let blue = information_matrix(&w, n, k).inverse_spd().unwrap();
            let err = (p.as_matrix() - blue.as_matrix()).norm() / blue.as_matrix().norm();
            assert!(err < 1e-9, "relative error {err}");
        }
    }

    #[test]
    fn alpha_scalar_oracle() {
        let sys = scalar_pair_sys();
        let w = sym(2, &[1.0, 0.0, 0.0, 0.25]);
        let r_matched = sym(2, &[1.0, 0.0, 0.0, 4.0]);
        assert_relative_eq!(alpha_metric(&sys, &w, &r_matched).unwrap(), 1.0, epsilon = 1e-12);

        let r_half = sym(2, &[1.0, 1.0, 1.0, 4.0]);
        let alpha = alpha_metric(&sys, &w, &r_half).unwrap();
        assert_relative_eq!(alpha, (1.12_f64 / 0.8).sqrt(), max_relative = 1e-12);

        // scaling R by 4 doubles alpha for k=1
        let r_scaled = r_half.scaled(4.0);
        assert_relative_eq!(
            alpha_metric(&sys, &w, &r_scaled).unwrap(),
            2.0 * alpha,
            max_relative = 1e-12
        );
    }

    #[test]
    fn beta_scalar_oracle() {
        let sys = scalar_pair_sys();
        let w = sym(2, &[1.0, 0.0, 0.0, 0.25]);
        let r_half = sym(2, &[1.0, 1.0, 1.0, 4.0]);
        let beta = beta_metric(&sys, &w, &r_half).unwrap();
        assert_relative_eq!(beta, 1.12_f64.sqrt(), max_relative = 1e-12);

        let w_blue = pseudo_inverse(&r_half, None).unwrap();
        assert_relative_eq!(beta_metric(&sys, &w_blue, &r_half).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_gauss_markov_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let n = rng.random_range(2..5usize);
            let k = rng.random_range(1..3usize);
            let r = random_spd(&mut rng, n * k, 0.1, 10.0);
            let w = random_spd(&mut rng, n * k, 0.05, 5.0);
            let ys = (0..n).map(|_| random_vector(&mut rng, k, 3.0)).collect();
            let sys = StackedSystem::from_vectors(k, ys).unwrap();
            let beta = beta_metric(&sys, &w, &r).unwrap();
            assert!(beta >= 1.0 - 1e-9, "beta = {beta}");
        }
    }

    #[test]
    fn weights_sum_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 4;
        let k = 2;
        let w = random_spd(&mut rng, n * k, 0.1, 10.0);
        let ys = (0..n).map(|_| random_vector(&mut rng, k, 3.0)).collect();
        let sys = StackedSystem::from_vectors(k, ys).unwrap();
        let res = gls_solve(&sys, &w).unwrap();
        let mut sum = DMatrix::zeros(k, k);
        for block in res.weights.as_ref().unwrap() {
            sum += block;
        }
        assert!((sum - DMatrix::identity(k, k)).norm() < 1e-9);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 3;
        let k = 2;
        let w = random_spd(&mut rng, n * k, 0.1, 10.0);
        let ys: Vec<DVector<f64>> = (0..n).map(|_| random_vector(&mut rng, k, 3.0)).collect();
        let sys = StackedSystem::from_vectors(k, ys.clone()).unwrap();
        let res = gls_solve(&sys, &w).unwrap();

        // permute estimates (2, 0, 1) and W accordingly
        let perm = [2usize, 0, 1];
        let ys_p: Vec<DVector<f64>> = perm.iter().map(|&i| ys[i].clone()).collect();
        let mut wp = DMatrix::zeros(n * k, n * k);
        for (pi, &i) in perm.iter().enumerate() {
            for (pj, &j) in perm.iter().enumerate() {
                wp.view_mut((pi * k, pj * k), (k, k))
                    .copy_from(&w.as_matrix().view((i * k, j * k), (k, k)));
            }
        }
        let sys_p = StackedSystem::from_vectors(k, ys_p).unwrap();
        let res_p = gls_solve(&sys_p, &SymMatrix::new(wp).unwrap()).unwrap();

        assert!((res.x_hat - res_p.x_hat).norm() < 1e-12);
        assert!(
            (res.covariance.as_matrix() - res_p.covariance.as_matrix()).norm() < 1e-12
        );
    }

    #[test]
    fn singular_information_is_rejected() {
        let sys = scalar_pair_sys();
        let w = SymMatrix::zeros(2);
        assert_eq!(gls_solve(&sys, &w).unwrap_err(), Error::InsufficientInformation);
    }

    #[test]
    fn estimate_validation() {
        assert!(matches!(
            Estimate::new(dvector![0.0], sym(1, &[-1.0])),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        assert!(matches!(
            Estimate::new(dvector![0.0, 0.0], sym(1, &[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));

        let est = Estimate::new(dvector![0.0], sym(1, &[2.0])).unwrap();
        let ok = est
            .clone()
            .with_components(alloc::vec![sym(1, &[0.5]), sym(1, &[1.5])])
            .unwrap();
        assert_eq!(ok.components().unwrap().len(), 2);
        assert!(matches!(
            est.with_components(alloc::vec![sym(1, &[0.5]), sym(1, &[1.0])]),
            Err(Error::ComponentSumMismatch { .. })
        ));
    }
}
