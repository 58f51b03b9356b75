//! The n-estimate joint covariance `R(r)` and its coefficient vectors.
//!
//! `R(r)` places `E_i` on the block diagonal and `r_ij sqrt(E_i E_j)` off
//! it. The pairwise-max vector `r_pm` collects the per-pair entropy
//! maximizers; a coordinate-ascent search refines it toward the joint
//! maximizer `r_max` (the efficient global search is an open problem, so the
//! ascent is a documented heuristic). Structured models split each
//! covariance into components with per-component coefficient rules,
//! including the exponential time-decay rule
//! `r_ij = r_ij_max * exp(-gamma |t_i - t_j|)`.

use alloc::vec::Vec;

use nalgebra::DMatrix;
// f64 math lives in libm for no_std builds; std's inherent methods
// shadow the trait under cfg(test), hence the allow.
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correlation::CorrelationVector;
use crate::error::Error;
use crate::gls::{information_matrix, Estimate};
use crate::linalg::{check_psd, pseudo_inverse, spd_product_sqrt, PsdReport, SymMatrix};
use crate::sample::random_spd;
use crate::util::{bisect_feasible_lower, bisect_feasible_upper, golden_section_max};
use crate::Result;

/// Assembles the nk x nk joint covariance from per-estimate covariances and
/// a pairwise coefficient vector. Pairs with a zero coefficient never touch
/// the product square root, so rank-deficient covariances are fine as long
/// as all their coefficients are zero.
pub fn build_joint(covariances: &[SymMatrix], coeffs: &CorrelationVector) -> Result<SymMatrix> {
    let n = covariances.len();
    if n == 0 {
        return Err(Error::InvalidParameter { what: "need at least one covariance" });
    }
    if coeffs.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: coeffs.n() });
    }
    let k = covariances[0].dim();
    for cov in covariances {
        if cov.dim() != k {
            return Err(Error::DimensionMismatch { expected: k, found: cov.dim() });
        }
    }
    let mut joint = DMatrix::zeros(n * k, n * k);
    for (i, cov) in covariances.iter().enumerate() {
        joint.view_mut((i * k, i * k), (k, k)).copy_from(cov.as_matrix());
    }
    for (i, j, r) in coeffs.iter_pairs() {
        if r == 0.0 {
            continue;
        }
        let cross = spd_product_sqrt(&covariances[i], &covariances[j])? * r;
        joint.view_mut((i * k, j * k), (k, k)).copy_from(&cross);
        joint.view_mut((j * k, i * k), (k, k)).copy_from(&cross.transpose());
    }
    Ok(SymMatrix::from_symmetric_unchecked(joint))
}

/// The pairwise-max coefficient vector: each entry is the entropy-maximizing
/// coefficient of the corresponding pair, solved in isolation.
pub fn pairwise_max_vector(covariances: &[SymMatrix]) -> Result<CorrelationVector> {
    let n = covariances.len();
    let mut coeffs = CorrelationVector::zeros(n)?;
    for i in 0..n {
        for j in (i + 1)..n {
            let geom = crate::pairwise::PairwiseGeometry::new(&covariances[i], &covariances[j])?;
            coeffs.set(i, j, geom.solve_rmax()?.r_max)?;
        }
    }
    Ok(coeffs)
}

/// Checks feasibility of the joint covariance induced by `coeffs` and caches
/// the report on the vector.
pub fn check_feasibility(
    covariances: &[SymMatrix],
    coeffs: &mut CorrelationVector,
    tol: Option<f64>,
) -> Result<PsdReport> {
    let joint = build_joint(covariances, coeffs)?;
    let report = check_psd(&joint, tol);
    coeffs.set_feasibility(report);
    Ok(report)
}

/// `ln |P|` of the BLUE solution under the joint covariance `R(coeffs)`,
/// with the pseudo-inverse taken when `R` is singular on the boundary.
pub fn joint_objective(covariances: &[SymMatrix], coeffs: &CorrelationVector) -> Result<f64> {
    let n = covariances.len();
    let k = covariances[0].dim();
    let joint = build_joint(covariances, coeffs)?;
    let w = pseudo_inverse(&joint, None)?;
    let info = information_matrix(&w, n, k);
    Ok(-info.log_det_pd().map_err(|_| Error::InsufficientInformation)?)
}

/// Options for the coordinate-ascent coefficient search.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub max_sweeps: usize,
    /// Stop when a full sweep improves the log-objective by less than this
    /// (relative to `max(1, |objective|)`).
    pub rel_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { max_sweeps: 50, rel_tol: 1e-10 }
    }
}

/// Outcome of [`search_rmax_vector`].
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub coefficients: CorrelationVector,
    /// `ln |P|` at the returned coefficients.
    pub objective: f64,
    /// `ln |P|` at the starting point.
    pub start_objective: f64,
    pub sweeps: usize,
    /// Set when the pairwise-max start was infeasible and the search fell
    /// back to the zero vector.
    pub used_zero_start: bool,
}

/// Heuristic search for the joint entropy-maximizing coefficient vector.
///
/// Coordinate ascent on `ln |P|` starting from the pairwise-max vector: one
/// coefficient at a time, a golden-section scan over its feasible
/// subinterval of `[0, 1]` (feasibility of each move is gated on `R` staying
/// positive semidefinite). Moves are only accepted on strict improvement, so
/// the returned objective never drops below the start.
pub fn search_rmax_vector(
    covariances: &[SymMatrix],
    options: &SearchOptions,
) -> Result<SearchResult> {
    let n = covariances.len();
    let mut coeffs = pairwise_max_vector(covariances)?;
    let mut used_zero_start = false;
    if n > 1 {
        let report = check_feasibility(covariances, &mut coeffs, None)?;
        if !report.is_psd {
            coeffs = CorrelationVector::zeros(n)?;
            used_zero_start = true;
        }
    }

    let objective = |c: &CorrelationVector| -> f64 {
        joint_objective(covariances, c).unwrap_or(f64::NEG_INFINITY)
    };
    let is_feasible = |c: &CorrelationVector| -> bool {
        match build_joint(covariances, c) {
            Ok(joint) => check_psd(&joint, None).is_psd,
            Err(_) => false,
        }
    };

    let start_objective = objective(&coeffs);
    if !start_objective.is_finite() {
        let joint = build_joint(covariances, &coeffs)?;
        return Err(Error::Infeasible { report: check_psd(&joint, None) });
    }

    let mut best = start_objective;
    let mut sweeps = 0;
    for _ in 0..options.max_sweeps {
        sweeps += 1;
        let sweep_start = best;
        for i in 0..n {
            for j in (i + 1)..n {
                let current = coeffs.get(i, j);
                let with_value = |r: f64| -> Option<CorrelationVector> {
                    let mut c = coeffs.clone();
                    c.set(i, j, r).ok()?;
                    Some(c)
                };
                let feasible_at = |r: f64| with_value(r).is_some_and(|c| is_feasible(&c));
                let hi = bisect_feasible_upper(feasible_at, current, 1.0, 1e-9);
                let lo = bisect_feasible_lower(feasible_at, current, 0.0, 1e-9);
                if hi - lo < 1e-12 {
                    continue;
                }
                let value_at =
                    |r: f64| with_value(r).map_or(f64::NEG_INFINITY, |c| objective(&c));
                let r_star = golden_section_max(value_at, lo, hi, 1e-10);
                let v_star = value_at(r_star);
                if v_star > best + 1e-12 * f64::max(1.0, best.abs()) {
                    coeffs.set(i, j, r_star)?;
                    best = v_star;
                }
            }
        }
        if (best - sweep_start) <= options.rel_tol * f64::max(1.0, best.abs()) {
            break;
        }
    }

    Ok(SearchResult {
        coefficients: coeffs,
        objective: best,
        start_objective,
        sweeps,
        used_zero_start,
    })
}

/// Parameters of the positive-semidefiniteness conjecture experiment.
#[derive(Debug, Clone, Copy)]
pub struct ConjectureParams {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    /// Eigenvalue tolerance; defaults to the spectral default when `None`.
    pub tol: Option<f64>,
}

/// Report of the conjecture experiment: does `R(r_pm)` stay positive
/// semidefinite over random ensembles? This never asserts; it counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjectureReport {
    pub trials: usize,
    pub violations: usize,
    pub worst_min_eigenvalue: f64,
    /// Seed of the trial with the most negative minimum eigenvalue.
    pub worst_seed: u64,
}

/// Samples random SPD ensembles, builds `R(r_pm)` for each and records the
/// minimum eigenvalue. Reproducible: trial `t` uses the ChaCha seed
/// `seed + t`.
pub fn psd_conjecture_trial(params: &ConjectureParams) -> Result<ConjectureReport> {
    if params.n < 2 || params.k < 1 || params.trials < 1 {
        return Err(Error::InvalidParameter {
            what: "conjecture experiment needs n >= 2, k >= 1, trials >= 1",
        });
    }
    let mut violations = 0;
    let mut worst_min_eigenvalue = f64::INFINITY;
    let mut worst_seed = params.seed;
    for t in 0..params.trials {
        let trial_seed = params.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let covs: Vec<SymMatrix> =
            (0..params.n).map(|_| random_spd(&mut rng, params.k, 0.1, 10.0)).collect();
        let coeffs = pairwise_max_vector(&covs)?;
        let joint = build_joint(&covs, &coeffs)?;
        let report = check_psd(&joint, params.tol);
        if !report.is_psd {
            violations += 1;
        }
        if report.min_eigenvalue < worst_min_eigenvalue {
            worst_min_eigenvalue = report.min_eigenvalue;
            worst_seed = trial_seed;
        }
    }
    Ok(ConjectureReport { trials: params.trials, violations, worst_min_eigenvalue, worst_seed })
}

/// Coefficient rule for one covariance component of a structured model.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentRule {
    /// Independent component: all cross coefficients zero.
    Zero,
    /// Per-pair entropy-maximizing coefficient of the component pair.
    PairwiseMax,
    /// `r_ij = r_ij_max * exp(-gamma |t_i - t_j|)`; estimates need
    /// timestamps.
    TimeDecay { gamma: f64 },
    /// Pairwise max within an instrument group, zero across groups;
    /// estimates need instrument tags.
    GroupedByInstrument,
}

/// A structured per-component covariance model. Component 0 of every
/// estimate is its independent part and always uses the zero rule; `rules`
/// covers components `1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredModel {
    rules: Vec<ComponentRule>,
}

impl StructuredModel {
    pub fn new(rules: Vec<ComponentRule>) -> Result<Self> {
        for rule in &rules {
            if let ComponentRule::TimeDecay { gamma } = rule {
                if gamma.is_nan() || *gamma <= 0.0 {
                    return Err(Error::InvalidParameter { what: "gamma must be positive" });
                }
            }
        }
        Ok(Self { rules })
    }

    /// Number of correlated components (m); estimates must carry m + 1.
    pub fn component_count(&self) -> usize {
        self.rules.len()
    }

    pub fn rules(&self) -> &[ComponentRule] {
        &self.rules
    }
}

/// A structured joint covariance with the coefficients actually applied to
/// each component (index 0 is the independent part, always zero).
#[derive(Debug, Clone)]
pub struct StructuredJoint {
    pub matrix: SymMatrix,
    pub component_coefficients: Vec<CorrelationVector>,
}

/// Assembles `R = R_0(0) + sum_a R_a(r_a)` from per-estimate covariance
/// components. The pairwise max of a component pair is taken on the
/// components themselves, and a pair with a rank-deficient component gets a
/// zero coefficient (no correlated structure is inferable there). The
/// assembled matrix must come out positive semidefinite.
pub fn build_structured_joint(
    estimates: &[Estimate],
    model: &StructuredModel,
) -> Result<StructuredJoint> {
    let n = estimates.len();
    if n == 0 {
        return Err(Error::InvalidParameter { what: "need at least one estimate" });
    }
    let m = model.component_count();
    let mut per_component: Vec<Vec<SymMatrix>> = Vec::with_capacity(m + 1);
    for a in 0..=m {
        let mut covs = Vec::with_capacity(n);
        for (idx, est) in estimates.iter().enumerate() {
            let comps = est.components().ok_or(Error::MissingComponents { index: idx })?;
            if comps.len() != m + 1 {
                return Err(Error::MissingComponents { index: idx });
            }
            covs.push(comps[a].clone());
        }
        per_component.push(covs);
    }

    let k = estimates[0].dim();
    let mut total = DMatrix::zeros(n * k, n * k);
    let mut component_coefficients = Vec::with_capacity(m + 1);
    for (a, covs) in per_component.iter().enumerate() {
        let coeffs = if a == 0 {
            CorrelationVector::zeros(n)?
        } else {
            component_coeffs(estimates, covs, &model.rules()[a - 1])?
        };
        total += build_joint(covs, &coeffs)?.as_matrix();
        component_coefficients.push(coeffs);
    }

    let matrix = SymMatrix::from_symmetric_unchecked(total);
    let report = check_psd(&matrix, None);
    if !report.is_psd {
        return Err(Error::Infeasible { report });
    }
    Ok(StructuredJoint { matrix, component_coefficients })
}

fn component_coeffs(
    estimates: &[Estimate],
    covs: &[SymMatrix],
    rule: &ComponentRule,
) -> Result<CorrelationVector> {
    let n = covs.len();
    let mut coeffs = CorrelationVector::zeros(n)?;
    if matches!(rule, ComponentRule::Zero) {
        return Ok(coeffs);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let r = match rule {
                ComponentRule::Zero => 0.0,
                ComponentRule::PairwiseMax => pair_rmax_or_zero(&covs[i], &covs[j])?,
                ComponentRule::TimeDecay { gamma } => {
                    let ti = estimates[i].time().ok_or(Error::MissingTimestamp { index: i })?;
                    let tj = estimates[j].time().ok_or(Error::MissingTimestamp { index: j })?;
                    pair_rmax_or_zero(&covs[i], &covs[j])? * (-gamma * (ti - tj).abs()).exp()
                }
                ComponentRule::GroupedByInstrument => {
                    let gi: &str =
                        estimates[i].instrument().ok_or(Error::MissingInstrument { index: i })?;
                    let gj: &str =
                        estimates[j].instrument().ok_or(Error::MissingInstrument { index: j })?;
                    if gi == gj {
                        pair_rmax_or_zero(&covs[i], &covs[j])?
                    } else {
                        0.0
                    }
                }
            };
            coeffs.set(i, j, r)?;
        }
    }
    Ok(coeffs)
}

fn pair_rmax_or_zero(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if !check_psd(a, None).is_pd || !check_psd(b, None).is_pd {
        return Ok(0.0);
    }
    let geom = crate::pairwise::PairwiseGeometry::new(a, b)?;
    Ok(geom.solve_rmax()?.r_max)
}
