//! JSON input/output documents and their validation.
//!
//! Matrices travel as row-major arrays of arrays. Every matrix is
//! symmetrized on load and gated through a positive-semidefiniteness check;
//! validation failures name the offending estimate index and eigenvalue.

use ellipse_fusion::linalg::{check_psd, project_psd};
use ellipse_fusion::nalgebra::{DMatrix, DVector};
use ellipse_fusion::{Estimate, SymMatrix};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Deserialize)]
pub struct InputDocument {
    pub k: usize,
    pub estimates: Vec<EstimateDoc>,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Default, Deserialize)]
pub struct Options {
    pub gamma: Option<f64>,
    pub method: Option<String>,
    pub tol: Option<f64>,
    /// Accepted for schema completeness; the deterministic commands ignore
    /// it and `conjecture` takes its seed from the command line.
    #[allow(dead_code)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct EstimateDoc {
    pub y: Vec<f64>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    pub t: Option<f64>,
    pub instrument: Option<String>,
    pub components: Option<Vec<Vec<Vec<f64>>>>,
}

fn parse_matrix(rows: &[Vec<f64>], k: usize, what: &str, index: usize) -> Result<SymMatrix, CliError> {
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::validation(format!(
            "estimate {index}: {what} must be a {k}x{k} matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    SymMatrix::new(DMatrix::from_row_slice(k, k, &flat))
        .map_err(|e| CliError::validation(format!("estimate {index}: {what}: {e}")))
}

impl InputDocument {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::validation(format!("invalid input document: {e}")))
    }

    /// Converts and validates all estimates. `tol` is the absolute PSD
    /// eigenvalue tolerance (command line overrides the document option).
    pub fn to_estimates(&self, tol: Option<f64>) -> Result<Vec<Estimate>, CliError> {
        let tol = tol.or(self.options.tol);
        if self.k == 0 {
            return Err(CliError::validation("k must be at least 1".to_string()));
        }
        if self.estimates.is_empty() {
            return Err(CliError::validation("document carries no estimates".to_string()));
        }
        let mut out = Vec::with_capacity(self.estimates.len());
        for (index, doc) in self.estimates.iter().enumerate() {
            if doc.y.len() != self.k {
                return Err(CliError::validation(format!(
                    "estimate {index}: y has length {}, expected {}",
                    doc.y.len(),
                    self.k
                )));
            }
            let cov = parse_matrix(&doc.e, self.k, "E", index)?;
            let report = check_psd(&cov, tol);
            if !report.is_psd {
                return Err(CliError::validation(format!(
                    "estimate {index}: covariance is not positive semidefinite \
                     (min eigenvalue {:e})",
                    report.min_eigenvalue
                )));
            }
            // A loose tolerance may admit slightly indefinite input; repair
            // it to the nearest PSD matrix so downstream kernels see a clean
            // covariance.
            let cov = if report.min_eigenvalue < 0.0 { project_psd(&cov) } else { cov };
            let mut est = Estimate::new_with_tol(DVector::from_row_slice(&doc.y), cov, tol)
                .map_err(|e| CliError::validation(format!("estimate {index}: {e}")))?;
            if let Some(t) = doc.t {
                if !t.is_finite() {
                    return Err(CliError::validation(format!(
                        "estimate {index}: timestamp must be finite"
                    )));
                }
                est = est.with_time(t);
            }
            if let Some(tag) = &doc.instrument {
                est = est.with_instrument(tag.clone());
            }
            if let Some(comps) = &doc.components {
                let mut parsed = Vec::with_capacity(comps.len());
                for rows in comps {
                    parsed.push(parse_matrix(rows, self.k, "component", index)?);
                }
                est = est.with_components(parsed).map_err(|e| {
                    CliError::validation(format!("estimate {index}: {e}"))
                })?;
            }
            out.push(est);
        }
        Ok(out)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Serialize)]
pub struct FuseOutput {
    pub x_hat: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub method: String,
    pub entropy: f64,
    #[serde(rename = "det_P")]
    pub det_p: f64,
    pub coefficients_used: serde_json::Value,
}

impl FuseOutput {
    pub fn from_result(result: &ellipse_fusion::FusionResult) -> Self {
        let coefficients_used = match &result.coefficients {
            None => serde_json::Value::Null,
            Some(per_component) if per_component.len() == 1 => {
                serde_json::json!(per_component[0].values())
            }
            Some(per_component) => {
                serde_json::json!(per_component
                    .iter()
                    .map(|cv| cv.values().to_vec())
                    .collect::<Vec<_>>())
            }
        };
        Self {
            x_hat: result.x_hat.iter().copied().collect(),
            p: matrix_rows(result.covariance.as_matrix()),
            method: result.method.as_str().to_string(),
            entropy: result.entropy,
            det_p: result.covariance.determinant(),
            coefficients_used,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RmaxOutput {
    pub r_max: f64,
    pub method: String,
    pub candidates: Vec<f64>,
    pub monotone_interval_verified: bool,
    pub degenerate: bool,
}

#[derive(Debug, Serialize)]
pub struct ConjectureOutput {
    pub trials: usize,
    pub violations: usize,
    pub worst_min_eigenvalue: f64,
    pub worst_seed: u64,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub index: usize,
    pub is_psd: bool,
    pub is_pd: bool,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Serialize)]
pub struct ValidateOutput {
    pub valid: bool,
    pub k: usize,
    pub n: usize,
    pub estimates: Vec<EstimateReport>,
    pub errors: Vec<String>,
}
