//! Seeded random matrices for experiments and tests.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// f64 math lives in libm for no_std builds; std's inherent methods
// shadow the trait under cfg(test), hence the allow.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::linalg::SymMatrix;

/// Random orthogonal matrix from the QR factorization of a matrix with
/// uniform entries.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let qr = raw.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the sign convention so the distribution does not depend on the QR
    // implementation's column signs.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random symmetric positive definite matrix with eigenvalues drawn
/// log-uniformly from `[min_eig, max_eig]`.
pub fn random_spd<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    min_eig: f64,
    max_eig: f64,
) -> SymMatrix {
    assert!(dim >= 1 && min_eig > 0.0 && max_eig >= min_eig);
    let q = random_orthogonal(rng, dim);
    let log_lo = min_eig.ln();
    let log_hi = max_eig.ln();
    let eigs: Vec<f64> = (0..dim)
        .map(|_| {
            if log_hi > log_lo {
                rng.random_range(log_lo..log_hi).exp()
            } else {
                min_eig
            }
        })
        .collect();
    let d = DMatrix::from_diagonal(&DVector::from_vec(eigs));
    SymMatrix::from_symmetric_unchecked(&q * d * q.transpose())
}

/// Random vector with entries uniform in `[-scale, scale]`.
pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-scale..scale))
}
