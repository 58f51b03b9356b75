//! Combining two ellipses under a scalar cross-correlation coefficient.
//!
//! For covariances `E1`, `E2` the joint covariance is parameterized as
//!
//! ```text
//! R(r) = [ E1            r sqrt(E1 E2) ]
//!        [ r sqrt(E1 E2)^T          E2 ]
//! ```
//!
//! which is positive semidefinite exactly for |r| <= 1. The BLUE combine at
//! coefficient `r` has precision `P^{-1} = (1 - r^2)^{-1} (S - r Z)` with
//! `S = E1^{-1} + E2^{-1}` and `Z = sqrt(E1^{-1} E2^{-1}) + transpose`. This
//! module finds the entropy-maximizing coefficient `r_max` (closed form for
//! k = 1, a cubic for k = 2, bracketed root search in general) and evaluates
//! the mismatch covariance and the `alpha` / `beta` diagnostics as functions
//! of a predicted coefficient `r_p` and an actual coefficient `r_n`.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix};
// f64 math lives in libm for no_std builds; std's inherent methods
// shadow the trait under cfg(test), hence the allow.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Error;
use crate::linalg::{adjugate, default_psd_tol, spd_product_sqrt, SymMatrix};
use crate::util::{bisect_root, golden_section_max};
use crate::Result;

/// Distance kept from the singular point r = 1 when the entropy maximum sits
/// on the boundary (equal-ellipse degeneracy).
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Cached geometry for a pair of covariances.
#[derive(Debug, Clone)]
pub struct PairwiseGeometry {
    e1: SymMatrix,
    e2: SymMatrix,
    e1_inv: SymMatrix,
    e2_inv: SymMatrix,
    /// Principal square root of `E1 E2`.
    cross_sqrt: DMatrix<f64>,
    /// Principal square root of `E1^{-1} E2^{-1}`.
    cross_sqrt_inv: DMatrix<f64>,
    s: SymMatrix,
    z: SymMatrix,
    lambda: f64,
}

impl PairwiseGeometry {
    /// Builds the geometry; both covariances must be symmetric positive
    /// definite and share a dimension.
    pub fn new(e1: &SymMatrix, e2: &SymMatrix) -> Result<Self> {
        if e1.dim() != e2.dim() {
            return Err(Error::DimensionMismatch { expected: e1.dim(), found: e2.dim() });
        }
        let e1_inv = e1.inverse_spd()?;
        let e2_inv = e2.inverse_spd()?;
        let cross_sqrt = spd_product_sqrt(e1, e2)?;
        let cross_sqrt_inv = spd_product_sqrt(&e1_inv, &e2_inv)?;
        let s = &e1_inv + &e2_inv;
        let z =
            SymMatrix::from_symmetric_unchecked(&cross_sqrt_inv + cross_sqrt_inv.transpose());
        let lambda = (s.as_matrix() * adjugate(z.as_matrix())?).trace();
        Ok(Self {
            e1: e1.clone(),
            e2: e2.clone(),
            e1_inv,
            e2_inv,
            cross_sqrt,
            cross_sqrt_inv,
            s,
            z,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.e1.dim()
    }

    pub fn e1(&self) -> &SymMatrix {
        &self.e1
    }

    pub fn e2(&self) -> &SymMatrix {
        &self.e2
    }

    /// `S = E1^{-1} + E2^{-1}`.
    pub fn s(&self) -> &SymMatrix {
        &self.s
    }

    /// `Z = sqrt(E1^{-1} E2^{-1}) + sqrt(E1^{-1} E2^{-1})^T`.
    pub fn z(&self) -> &SymMatrix {
        &self.z
    }

    /// `lambda = tr(S adj(Z))`, the cubic's mixed invariant.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The assembled 2k x 2k joint covariance at coefficient `r`.
    ///
    /// No range check: values with |r| > 1 deliberately produce an indefinite
    /// matrix, which is useful for feasibility diagnostics.
    pub fn joint_covariance(&self, r: f64) -> Result<SymMatrix> {
        if !r.is_finite() {
            return Err(Error::NonFinite);
        }
        let k = self.dim();
        let mut m = DMatrix::zeros(2 * k, 2 * k);
        m.view_mut((0, 0), (k, k)).copy_from(self.e1.as_matrix());
        m.view_mut((k, k), (k, k)).copy_from(self.e2.as_matrix());
        let cross = &self.cross_sqrt * r;
        m.view_mut((0, k), (k, k)).copy_from(&cross);
        m.view_mut((k, 0), (k, k)).copy_from(&cross.transpose());
        Ok(SymMatrix::from_symmetric_unchecked(m))
    }

    /// Closed-form inverse of [`Self::joint_covariance`]:
    /// `(1-r^2)^{-1} [[E1^{-1}, -r sqrt(E1^{-1}E2^{-1})], [.., E2^{-1}]]`.
    pub fn joint_precision(&self, r: f64) -> Result<SymMatrix> {
        if !r.is_finite() || r.abs() >= 1.0 {
            return Err(Error::CoefficientOutOfRange { value: r });
        }
        let k = self.dim();
        let scale = 1.0 / (1.0 - r * r);
        let mut m = DMatrix::zeros(2 * k, 2 * k);
        m.view_mut((0, 0), (k, k)).copy_from(self.e1_inv.as_matrix());
        m.view_mut((k, k), (k, k)).copy_from(self.e2_inv.as_matrix());
        let cross = &self.cross_sqrt_inv * (-r);
        m.view_mut((0, k), (k, k)).copy_from(&cross);
        m.view_mut((k, 0), (k, k)).copy_from(&cross.transpose());
        Ok(SymMatrix::from_symmetric_unchecked(m * scale))
    }

    /// Precision of the BLUE combine at coefficient `r`:
    /// `(1 - r^2)^{-1} (S - r Z)`.
    pub fn precision(&self, r: f64) -> Result<SymMatrix> {
        if !r.is_finite() || r.abs() >= 1.0 {
            return Err(Error::CoefficientOutOfRange { value: r });
        }
        Ok(SymMatrix::linear_comb(1.0, &self.s, -r, &self.z).scaled(1.0 / (1.0 - r * r)))
    }

    /// `ln |P|(r)`, where `P` is the BLUE covariance at coefficient `r`.
    /// Returns `-inf` outside the valid range instead of failing, so it can
    /// be fed straight into 1-D maximizers.
    pub fn log_det_p(&self, r: f64) -> f64 {
        if !r.is_finite() || r.abs() >= 1.0 {
            return f64::NEG_INFINITY;
        }
        let sm = SymMatrix::linear_comb(1.0, &self.s, -r, &self.z);
        let det = sm.determinant();
        if det <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.dim() as f64 * (1.0 - r * r).ln() - det.ln()
    }

    /// Derivative of `|P^{-1}|` with respect to `r`:
    /// `[r^2 tr(adj(S - rZ) Z) + 2 k r |S - rZ| - tr(adj(S - rZ) Z)]
    ///  / (1 - r^2)^{k+1}`.
    pub fn precision_det_derivative(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r.abs() >= 1.0 {
            return Err(Error::CoefficientOutOfRange { value: r });
        }
        let k = self.dim();
        let g = self.derivative_numerator(r)?;
        Ok(g / (1.0 - r * r).powi(k as i32 + 1))
    }

    /// Numerator of [`Self::precision_det_derivative`]; its sign changes
    /// locate the critical points of `|P|`.
    fn derivative_numerator(&self, r: f64) -> Result<f64> {
        let k = self.dim() as f64;
        let sm = SymMatrix::linear_comb(1.0, &self.s, -r, &self.z);
        let adj = adjugate(sm.as_matrix())?;
        let tr_adj_z = (&adj * self.z.as_matrix()).trace();
        let det = sm.determinant();
        Ok(r * r * tr_adj_z + 2.0 * k * r * det - tr_adj_z)
    }

    /// Coefficients `[2|Z|, -3 lambda, 4|S| + 2|Z|, -lambda]` of the k = 2
    /// cubic whose admissible root is `r_max`.
    pub fn cubic_coefficients(&self) -> Result<[f64; 4]> {
        if self.dim() != 2 {
            return Err(Error::InvalidParameter { what: "cubic applies to k = 2 only" });
        }
        let det_z = self.z.determinant();
        let det_s = self.s.determinant();
        Ok([2.0 * det_z, -3.0 * self.lambda, 4.0 * det_s + 2.0 * det_z, -self.lambda])
    }

    /// Entropy-maximizing coefficient. Dispatches on the dimension:
    /// closed form for k = 1, cubic for k = 2, bracketed root search on the
    /// derivative numerator for k >= 3.
    pub fn solve_rmax(&self) -> Result<RmaxResult> {
        let (candidates, method) = match self.dim() {
            1 => {
                let s = self.s[(0, 0)];
                let z = self.z[(0, 0)];
                let disc = (s * s - z * z).max(0.0).sqrt();
                (alloc::vec![(s - disc) / z, (s + disc) / z], RmaxMethod::ClosedForm1d)
            }
            2 => {
                let coeffs = self.cubic_coefficients()?;
                (real_polynomial_roots(&coeffs), RmaxMethod::Cubic2d)
            }
            _ => (self.scan_derivative_roots(), RmaxMethod::NumericGeneral),
        };

        let interior_hi = 1.0 - BOUNDARY_EPS;
        let mut interior: Vec<f64> =
            candidates.iter().copied().filter(|&r| r > 1e-12 && r < interior_hi).collect();

        if interior.is_empty() && method == RmaxMethod::NumericGeneral {
            // No bracketed sign change: fall back to maximizing ln|P| itself.
            let r = golden_section_max(|r| self.log_det_p(r), 0.0, interior_hi, 1e-12);
            if r > 1e-9 && r < interior_hi - 1e-9 {
                interior.push(r);
            }
        }

        let at_zero = self.log_det_p(0.0);
        let best_interior = interior
            .iter()
            .copied()
            .map(|r| (r, self.log_det_p(r)))
            .max_by(|a, b| a.1.total_cmp(&b.1));

        let (r_max, degenerate) = match best_interior {
            Some((r, v)) if v >= at_zero => {
                // k = 1 admits the exact closed form min(s1/s2, s2/s1).
                if self.dim() == 1 {
                    let sigma1 = self.e1[(0, 0)].sqrt();
                    let sigma2 = self.e2[(0, 0)].sqrt();
                    let exact = (sigma1 / sigma2).min(sigma2 / sigma1);
                    if exact < interior_hi {
                        (exact, false)
                    } else {
                        (interior_hi, true)
                    }
                } else {
                    (r, false)
                }
            }
            _ => {
                // No interior critical point improves on r = 0: the maximum
                // sits on the boundary (degenerate, e.g. equal ellipses) or
                // at zero.
                if self.log_det_p(interior_hi) > at_zero {
                    (interior_hi, true)
                } else {
                    (0.0, true)
                }
            }
        };

        let monotone_interval_verified = self.verify_monotone(r_max);
        Ok(RmaxResult { r_max, method, candidates, monotone_interval_verified, degenerate })
    }

    /// Brackets sign changes of the derivative numerator on 256 subintervals
    /// of (0, 1) and refines each bracket by bisection.
    fn scan_derivative_roots(&self) -> Vec<f64> {
        const SUBDIVISIONS: usize = 256;
        let lo = 1e-9;
        let hi = 1.0 - 1e-9;
        let g = |r: f64| self.derivative_numerator(r).unwrap_or(f64::NAN);
        let mut roots = Vec::new();
        let mut prev_r = lo;
        let mut prev_g = g(lo);
        for i in 1..=SUBDIVISIONS {
            let r = lo + (hi - lo) * i as f64 / SUBDIVISIONS as f64;
            let gr = g(r);
            if prev_g == 0.0 {
                roots.push(prev_r);
            } else if prev_g.is_finite() && gr.is_finite() && prev_g * gr < 0.0 {
                roots.push(bisect_root(g, prev_r, r, 1e-12));
            }
            prev_r = r;
            prev_g = gr;
        }
        roots
    }

    fn verify_monotone(&self, r_max: f64) -> bool {
        const GRID: usize = 64;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..GRID {
            let r = r_max * i as f64 / (GRID - 1) as f64;
            let v = self.log_det_p(r);
            if v < prev - 1e-12 {
                return false;
            }
            prev = v;
        }
        true
    }

    /// Covariance of the combine when the weights assume coefficient `r_p`
    /// but the truth is `r_n`:
    /// `(S - r_p Z)^{-1} [(1 - 2 r_p r_n + r_p^2) S
    ///  + (r_n - 2 r_p + r_n r_p^2) Z] (S - r_p Z)^{-1}`.
    pub fn mismatch_covariance(&self, r_p: f64, r_n: f64) -> Result<SymMatrix> {
        let (w_inv, mid) = self.mismatch_parts(r_p, r_n)?;
        Ok(SymMatrix::from_symmetric_unchecked(
            w_inv.as_matrix() * mid.as_matrix() * w_inv.as_matrix(),
        ))
    }

    fn mismatch_parts(&self, r_p: f64, r_n: f64) -> Result<(SymMatrix, SymMatrix)> {
        if !r_p.is_finite() || r_p.abs() >= 1.0 {
            return Err(Error::CoefficientOutOfRange { value: r_p });
        }
        if !r_n.is_finite() || r_n.abs() > 1.0 {
            return Err(Error::CoefficientOutOfRange { value: r_n });
        }
        let w = SymMatrix::linear_comb(1.0, &self.s, -r_p, &self.z);
        let eig = w.as_matrix().clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min <= default_psd_tol(self.dim(), eig.eigenvalues.max()) {
            return Err(Error::SingularWeightModel { min_eigenvalue: min });
        }
        let w_inv = w.inverse_spd().map_err(|_| Error::SingularWeightModel { min_eigenvalue: min })?;
        let mid = SymMatrix::linear_comb(
            1.0 - 2.0 * r_p * r_n + r_p * r_p,
            &self.s,
            r_n - 2.0 * r_p + r_n * r_p * r_p,
            &self.z,
        );
        Ok((w_inv, mid))
    }

    /// `alpha(r_p, r_n)`: ratio of the actual error integral to the one
    /// reported by the `r_p` weight model. Equals 1 whenever `r_p == r_n`.
    pub fn alpha(&self, r_p: f64, r_n: f64) -> Result<f64> {
        let k = self.dim() as f64;
        let (_, mid) = self.mismatch_parts(r_p, r_n)?;
        let sm = SymMatrix::linear_comb(1.0, &self.s, -r_p, &self.z);
        let log_num = match log_det_or_neg_inf(&mid) {
            Some(v) => v,
            None => return Ok(0.0),
        };
        let log_den = sm.log_det_pd().map_err(|_| Error::SingularWeightModel {
            min_eigenvalue: sm.min_eigenvalue(),
        })?;
        Ok((-0.5 * k * (1.0 - r_p * r_p).ln() + 0.5 * (log_num - log_den)).exp())
    }

    /// `beta(r_p, r_n)`: ratio of the actual error integral to the BLUE's at
    /// the true coefficient. Bounded below by 1 (Gauss-Markov).
    pub fn beta(&self, r_p: f64, r_n: f64) -> Result<f64> {
        if !r_n.is_finite() || r_n.abs() >= 1.0 {
            return Err(Error::CoefficientOutOfRange { value: r_n });
        }
        let k = self.dim() as f64;
        let (_, mid) = self.mismatch_parts(r_p, r_n)?;
        let sm_p = SymMatrix::linear_comb(1.0, &self.s, -r_p, &self.z);
        let sm_n = SymMatrix::linear_comb(1.0, &self.s, -r_n, &self.z);
        let log_mid = match log_det_or_neg_inf(&mid) {
            Some(v) => v,
            None => return Ok(0.0),
        };
        let log_p = sm_p.log_det_pd().map_err(|_| Error::SingularWeightModel {
            min_eigenvalue: sm_p.min_eigenvalue(),
        })?;
        let log_n = sm_n.log_det_pd()?;
        Ok((0.5 * (log_n + log_mid - k * (1.0 - r_n * r_n).ln() - 2.0 * log_p)).exp())
    }
}

fn log_det_or_neg_inf(m: &SymMatrix) -> Option<f64> {
    let vals = m.eigenvalues();
    if vals.min() <= 0.0 {
        return None;
    }
    Some(vals.iter().map(|v| v.ln()).sum())
}

/// How `r_max` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmaxMethod {
    ClosedForm1d,
    Cubic2d,
    NumericGeneral,
}

impl RmaxMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RmaxMethod::ClosedForm1d => "closed-form-1d",
            RmaxMethod::Cubic2d => "cubic-2d",
            RmaxMethod::NumericGeneral => "numeric-general",
        }
    }
}

/// Result of the entropy-maximizing coefficient solve.
#[derive(Debug, Clone)]
pub struct RmaxResult {
    /// The selected coefficient in `[0, 1]`.
    pub r_max: f64,
    pub method: RmaxMethod,
    /// All real roots considered before filtering.
    pub candidates: Vec<f64>,
    /// Whether `|P|(r)` was non-decreasing on a 64-point grid over
    /// `[0, r_max]`.
    pub monotone_interval_verified: bool,
    /// Set when no interior critical point exists and the maximum sits on
    /// the r -> 1 boundary (equal ellipses) or at zero.
    pub degenerate: bool,
}

/// Real roots of a low-degree polynomial (coefficients highest degree first)
/// via the companion-matrix eigenvalue method.
fn real_polynomial_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut first = 0;
    while first < coeffs.len() && coeffs[first].abs() < 1e-14 * scale {
        first += 1;
    }
    let monic: Vec<f64> = coeffs[first..].iter().map(|c| c / coeffs[first]).collect();
    let degree = monic.len().saturating_sub(1);
    match degree {
        0 => Vec::new(),
        1 => alloc::vec![-monic[1]],
        _ => {
            let mut companion = DMatrix::zeros(degree, degree);
            for i in 1..degree {
                companion[(i, i - 1)] = 1.0;
            }
            for i in 0..degree {
                companion[(i, degree - 1)] = -monic[degree - i];
            }
            let eigs: Vec<Complex<f64>> =
                companion.complex_eigenvalues().iter().copied().collect();
            eigs.into_iter()
                .filter(|e| e.im.abs() <= 1e-9 * (1.0 + e.re.abs()))
                .map(|e| e.re)
                .collect()
        }
    }
}

/// Scalar combine weights at coefficient `r` (k = 1):
/// `w1 = (s2^2 - r s1 s2) / (s1^2 + s2^2 - 2 r s1 s2)` and symmetrically for
/// `w2`; they always sum to one. Beyond `r_max` exactly one weight turns
/// negative.
pub fn scalar_weights(sigma1: f64, sigma2: f64, r: f64) -> Result<(f64, f64)> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter { what: "sigmas must be positive and r finite" });
    }
    let denom = sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * r * sigma1 * sigma2;
    if denom.abs() < 1e-300 {
        return Err(Error::ZeroDenominator);
    }
    let w1 = (sigma2 * sigma2 - r * sigma1 * sigma2) / denom;
    let w2 = (sigma1 * sigma1 - r * sigma1 * sigma2) / denom;
    Ok((w1, w2))
}
