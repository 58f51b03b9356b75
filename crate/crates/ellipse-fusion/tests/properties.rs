//! Property tests for the matrix kernels and the pairwise parameterization.

use ellipse_fusion::linalg::{adjugate, check_psd, pseudo_inverse, spd_product_sqrt, spd_sqrt};
use ellipse_fusion::nalgebra::DMatrix;
use ellipse_fusion::sample::random_spd;
use ellipse_fusion::{PairwiseGeometry, SymMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A seeded SPD matrix with condition number at most 1e6.
fn spd_from(seed: u64, dim: usize) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_spd(&mut rng, dim, 1e-3, 1e3)
}

/// Moderately conditioned SPD matrix (cond <= 1e3) for the pair identities,
/// whose rounding error compounds the conditioning of both factors.
fn spd_pair_from(seed: u64, dim: usize) -> (SymMatrix, SymMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_spd(&mut rng, dim, 0.05, 50.0), random_spd(&mut rng, dim, 0.05, 50.0))
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, .. ProptestConfig::default() })]

    #[test]
    fn sqrt_squares_back(seed in any::<u64>(), dim in 1usize..=5) {
        let m = spd_from(seed, dim);
        let q = spd_sqrt(&m).unwrap();
        let back = q.as_matrix() * q.as_matrix();
        prop_assert!(rel_err(&back, m.as_matrix()) < 1e-10);
    }

    #[test]
    fn product_sqrt_squares_back(seed in any::<u64>(), dim in 1usize..=5) {
        let (e1, e2) = spd_pair_from(seed, dim);
        let n = spd_product_sqrt(&e1, &e2).unwrap();
        let product = e1.as_matrix() * e2.as_matrix();
        prop_assert!(rel_err(&(&n * &n), &product) < 1e-10);
    }

    /// The cancellation the Schur complement of the pairwise joint
    /// covariance depends on: N E2^{-1} N^T = E1.
    #[test]
    fn product_sqrt_schur_cancellation(seed in any::<u64>(), dim in 1usize..=4) {
        let (e1, e2) = spd_pair_from(seed, dim);
        let n = spd_product_sqrt(&e1, &e2).unwrap();
        let back = &n * e2.inverse_spd().unwrap().as_matrix() * n.transpose();
        prop_assert!(rel_err(&back, e1.as_matrix()) < 1e-9);
    }

    /// Cross-root identity: E1^{-1} sqrt(E1 E2) E2^{-1} = sqrt(E1^{-1} E2^{-1}).
    #[test]
    fn product_sqrt_cross_root(seed in any::<u64>(), dim in 1usize..=4) {
        let (e1, e2) = spd_pair_from(seed, dim);
        let lhs = e1.inverse_spd().unwrap().as_matrix()
            * spd_product_sqrt(&e1, &e2).unwrap()
            * e2.inverse_spd().unwrap().as_matrix();
        let rhs = spd_product_sqrt(&e1.inverse_spd().unwrap(), &e2.inverse_spd().unwrap()).unwrap();
        prop_assert!(rel_err(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn adjugate_identity(seed in any::<u64>(), dim in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-2.0..2.0));
        let adj = adjugate(&m).unwrap();
        let det = m.determinant();
        let err = (&m * &adj - DMatrix::identity(dim, dim) * det).norm()
            / (1.0 + det.abs());
        prop_assert!(err < 1e-9);
    }

    /// Penrose conditions 1 and 2 on rank-deficient PSD matrices.
    #[test]
    fn pseudo_inverse_penrose(seed in any::<u64>(), dim in 2usize..=5, deficit in 1usize..=2) {
        let deficit = deficit.min(dim - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // rank-deficient PSD: G G^T with G of shape dim x (dim - deficit)
        let g = DMatrix::from_fn(dim, dim - deficit, |_, _| rng.random_range(-2.0..2.0));
        let m = SymMatrix::new(&g * g.transpose()).unwrap();
        let p = pseudo_inverse(&m, None).unwrap();
        let mm = m.as_matrix();
        let pm = p.as_matrix();
        let scale = mm.norm().max(1e-300);
        prop_assert!((mm * pm * mm - mm).norm() / scale < 1e-9);
        prop_assert!((pm * mm * pm - pm).norm() / pm.norm().max(1e-300) < 1e-9);
    }

    /// The pairwise joint covariance is PSD exactly up to |r| = 1, and its
    /// precision identity holds inside the interval.
    #[test]
    fn pairwise_precision_identity(seed in any::<u64>(), dim in 1usize..=3, step in 0usize..10) {
        let (e1, e2) = spd_pair_from(seed, dim);
        let geom = PairwiseGeometry::new(&e1, &e2).unwrap();
        let r = -0.9 + 1.8 * (step as f64 / 9.0);

        let prec_direct = geom.precision(r).unwrap();
        let w = geom.joint_precision(r).unwrap();
        let mut info = DMatrix::zeros(dim, dim);
        for i in 0..2 {
            for j in 0..2 {
                info += w.as_matrix().view((i * dim, j * dim), (dim, dim));
            }
        }
        prop_assert!(rel_err(&info, prec_direct.as_matrix()) < 1e-9);

        prop_assert!(check_psd(&geom.joint_covariance(r).unwrap(), None).is_psd);
    }

    /// Entropy of the combine is non-decreasing up to r_max (log-det form).
    #[test]
    fn entropy_monotone_to_rmax(seed in any::<u64>(), dim in 1usize..=3) {
        let (e1, e2) = spd_pair_from(seed, dim);
        let geom = PairwiseGeometry::new(&e1, &e2).unwrap();
        let result = geom.solve_rmax().unwrap();
        prop_assert!(result.monotone_interval_verified);
        prop_assert!((0.0..=1.0).contains(&result.r_max));
    }

    /// The 1-D max-entropy combine settles on the better sensor:
    /// P(r_max, r_max) = min(sigma1, sigma2)^2.
    #[test]
    fn scalar_max_entropy_is_min_variance(s1 in 0.1f64..10.0, s2 in 0.1f64..10.0) {
        let geom = PairwiseGeometry::new(
            &SymMatrix::from_diagonal(&[s1 * s1]).unwrap(),
            &SymMatrix::from_diagonal(&[s2 * s2]).unwrap(),
        )
        .unwrap();
        let result = geom.solve_rmax().unwrap();
        let p = geom.mismatch_covariance(result.r_max, result.r_max).unwrap()[(0, 0)];
        let expected = s1.min(s2).powi(2);
        prop_assert!((p - expected).abs() / expected < 1e-7, "p = {}, expected {}", p, expected);
    }

    /// For commuting (diagonal) pairs, convolving under-reports whenever the
    /// truth is positively correlated: alpha(0, r_n) >= 1, non-decreasing.
    #[test]
    fn commuting_alpha_from_zero_grows(seed in any::<u64>(), dim in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d1: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..5.0)).collect();
        let d2: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..5.0)).collect();
        let geom = PairwiseGeometry::new(
            &SymMatrix::from_diagonal(&d1).unwrap(),
            &SymMatrix::from_diagonal(&d2).unwrap(),
        )
        .unwrap();
        let r_max = geom.solve_rmax().unwrap().r_max;
        let mut prev = 0.0;
        for i in 0..=16 {
            let r_n = r_max * i as f64 / 16.0;
            let a = geom.alpha(0.0, r_n).unwrap();
            prop_assert!(a >= 1.0 - 1e-12);
            prop_assert!(a >= prev - 1e-12);
            prev = a;
        }
    }
}
