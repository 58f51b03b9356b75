//! Command line for fusing location estimates with unknown cross-estimate
//! correlations.
//!
//! Subcommands: `fuse`, `rmax`, `sweep`, `conjecture`, `validate`. Input is a
//! JSON document on standard input or behind `--input`; results go to
//! standard output as JSON (CSV for `sweep`). Exit codes: 0 on success, 2 on
//! validation failures, 3 on numerical infeasibility.

mod document;

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ellipse_fusion::joint::{psd_conjecture_trial, ComponentRule, ConjectureParams, StructuredModel};
use ellipse_fusion::linalg::{check_psd, gaussian_entropy};
use ellipse_fusion::nalgebra::DMatrix;
use ellipse_fusion::{fusion, Error, Estimate, PairwiseGeometry, SymMatrix};

use document::{
    ConjectureOutput, EstimateReport, FuseOutput, InputDocument, RmaxOutput, ValidateOutput,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: malformed documents, non-PSD covariances, bad flags.
    Validation(String),
    /// Structurally valid input that admits no solution.
    Infeasible(String),
}

impl CliError {
    fn validation(message: String) -> Self {
        CliError::Validation(message)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Infeasible(m) => m,
        }
    }
}

/// Errors raised while computing on already-validated inputs are numerical
/// infeasibilities; missing metadata discovered late is still a validation
/// problem.
fn compute_error(e: Error) -> CliError {
    match e {
        Error::MissingTimestamp { .. }
        | Error::MissingInstrument { .. }
        | Error::MissingComponents { .. }
        | Error::ComponentSumMismatch { .. }
        | Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::NotSquare { .. }
        | Error::NonFinite => CliError::Validation(e.to_string()),
        _ => CliError::Infeasible(e.to_string()),
    }
}

#[derive(Parser)]
#[command(
    name = "ellipse-fusion",
    version,
    about = "Fuse location estimates when cross-estimate correlations are unknown"
)]
struct Cli {
    /// Input document path; standard input when omitted.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Absolute eigenvalue tolerance for positive-semidefiniteness checks.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Convolve,
    MaxEntropy,
    MaxEntropyPm,
    ConvolveInflated,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse all estimates in the input document.
    Fuse {
        /// Fusion algorithm; falls back to the document's options.method.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Entropy-maximizing cross-correlation coefficient of one pair.
    Rmax {
        /// Estimate indices of the pair.
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Vec<usize>,
    },
    /// CSV sweep of det(P), alpha, beta and entropy over the actual
    /// coefficient r_n for one pair.
    Sweep {
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Vec<usize>,
        /// Number of grid points over [0, 1).
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Predicted coefficient: "zero", "rmax" or a numeric value.
        #[arg(long, default_value = "zero")]
        rp: String,
    },
    /// Sample random ensembles and report how often R(r_pm) fails the
    /// positive-semidefiniteness check.
    Conjecture {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        trials: usize,
    },
    /// Validate the input document and report per-estimate status.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn read_input(cli: &Cli) -> Result<InputDocument, CliError> {
    let text = match &cli.input {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read {}: {e}", path.display()))
        })?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| CliError::validation(format!("cannot read standard input: {e}")))?;
            buf
        }
    };
    InputDocument::parse(&text)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Infeasible(format!("serialization failed: {e}")))?;
    println!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fuse { method } => cmd_fuse(cli, *method),
        Command::Rmax { pair } => cmd_rmax(cli, pair),
        Command::Sweep { pair, grid, rp } => cmd_sweep(cli, pair, *grid, rp),
        Command::Conjecture { n, k, trials } => cmd_conjecture(cli, *n, *k, *trials),
        Command::Validate => cmd_validate(cli),
    }
}

fn require_pd(estimates: &[Estimate], tol: Option<f64>) -> Result<(), CliError> {
    for (index, est) in estimates.iter().enumerate() {
        let report = check_psd(est.covariance(), tol);
        if !report.is_pd {
            return Err(CliError::validation(format!(
                "estimate {index}: covariance must be positive definite for this method \
                 (min eigenvalue {:e})",
                report.min_eigenvalue
            )));
        }
    }
    Ok(())
}

/// Structured fusion needs per-component rules, which the document encodes
/// implicitly: a gamma option selects time decay, instrument tags on every
/// estimate select grouping, and otherwise the plain pairwise max applies.
fn structured_model(doc: &InputDocument, estimates: &[Estimate]) -> Result<StructuredModel, CliError> {
    let components = estimates[0]
        .components()
        .ok_or_else(|| CliError::validation("structured fusion needs components".to_string()))?;
    let m = components.len().saturating_sub(1);
    let rule = if let Some(gamma) = doc.options.gamma {
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(CliError::validation("gamma must be positive".to_string()));
        }
        ComponentRule::TimeDecay { gamma }
    } else if estimates.iter().all(|e| e.instrument().is_some()) {
        ComponentRule::GroupedByInstrument
    } else {
        ComponentRule::PairwiseMax
    };
    StructuredModel::new(vec![rule; m]).map_err(compute_error)
}

fn cmd_fuse(cli: &Cli, method: Option<MethodArg>) -> Result<(), CliError> {
    let doc = read_input(cli)?;
    let tol = cli.tol.or(doc.options.tol);
    let estimates = doc.to_estimates(cli.tol)?;

    let method = match method {
        Some(m) => m,
        None => match doc.options.method.as_deref() {
            Some("convolve") => MethodArg::Convolve,
            Some("max-entropy") => MethodArg::MaxEntropy,
            Some("max-entropy-pm") => MethodArg::MaxEntropyPm,
            Some("convolve-inflated") => MethodArg::ConvolveInflated,
            Some("structured") => MethodArg::Structured,
            Some(other) => {
                return Err(CliError::validation(format!("unknown method \"{other}\"")))
            }
            None => {
                return Err(CliError::validation(
                    "no method given (use --method or options.method)".to_string(),
                ))
            }
        },
    };

    let result = match method {
        MethodArg::Convolve => fusion::fuse_convolve(&estimates).map_err(compute_error)?,
        MethodArg::MaxEntropy => {
            require_pd(&estimates, tol)?;
            fusion::fuse_max_entropy(&estimates, fusion::MaxEntropyMode::Exact)
                .map_err(compute_error)?
        }
        MethodArg::MaxEntropyPm => {
            require_pd(&estimates, tol)?;
            fusion::fuse_max_entropy(&estimates, fusion::MaxEntropyMode::PairwiseMax)
                .map_err(compute_error)?
        }
        MethodArg::ConvolveInflated => {
            require_pd(&estimates, tol)?;
            fusion::fuse_convolve_inflated(&estimates).map_err(compute_error)?
        }
        MethodArg::Structured => {
            let model = structured_model(&doc, &estimates)?;
            fusion::fuse_structured(&estimates, &model).map_err(compute_error)?
        }
    };
    print_json(&FuseOutput::from_result(&result))
}

fn pair_geometry(
    doc: &InputDocument,
    cli: &Cli,
    pair: &[usize],
) -> Result<PairwiseGeometry, CliError> {
    if pair.len() != 2 {
        return Err(CliError::validation("--pair needs exactly two indices".to_string()));
    }
    let estimates = doc.to_estimates(cli.tol)?;
    let (i, j) = (pair[0], pair[1]);
    if i == j || i >= estimates.len() || j >= estimates.len() {
        return Err(CliError::validation(format!(
            "pair ({i}, {j}) out of range for {} estimates",
            estimates.len()
        )));
    }
    require_pd(&estimates[i..=i], cli.tol.or(doc.options.tol))
        .map_err(|_| pd_error(i, &estimates[i]))?;
    require_pd(&estimates[j..=j], cli.tol.or(doc.options.tol))
        .map_err(|_| pd_error(j, &estimates[j]))?;
    PairwiseGeometry::new(estimates[i].covariance(), estimates[j].covariance())
        .map_err(compute_error)
}

fn pd_error(index: usize, est: &Estimate) -> CliError {
    let report = check_psd(est.covariance(), None);
    CliError::validation(format!(
        "estimate {index}: covariance must be positive definite (min eigenvalue {:e})",
        report.min_eigenvalue
    ))
}

fn cmd_rmax(cli: &Cli, pair: &[usize]) -> Result<(), CliError> {
    let doc = read_input(cli)?;
    let geom = pair_geometry(&doc, cli, pair)?;
    let result = geom.solve_rmax().map_err(compute_error)?;
    print_json(&RmaxOutput {
        r_max: result.r_max,
        method: result.method.as_str().to_string(),
        candidates: result.candidates,
        monotone_interval_verified: result.monotone_interval_verified,
        degenerate: result.degenerate,
    })
}

fn cmd_sweep(cli: &Cli, pair: &[usize], grid: usize, rp: &str) -> Result<(), CliError> {
    if grid < 2 {
        return Err(CliError::validation("--grid must be at least 2".to_string()));
    }
    let doc = read_input(cli)?;
    let geom = pair_geometry(&doc, cli, pair)?;
    let r_max = geom.solve_rmax().map_err(compute_error)?.r_max;
    let r_p = match rp {
        "zero" => 0.0,
        "rmax" => r_max,
        value => value.parse::<f64>().map_err(|_| {
            CliError::validation(format!("--rp must be \"zero\", \"rmax\" or a number, got \"{value}\""))
        })?,
    };
    if !r_p.is_finite() || r_p.abs() >= 1.0 {
        return Err(CliError::validation(format!("--rp value {r_p} outside (-1, 1)")));
    }

    let mut out = String::from("r_p,r_n,det_P,alpha,beta,entropy,in_recommended_region\n");
    for step in 0..grid {
        let r_n = step as f64 / grid as f64;
        let p = geom.mismatch_covariance(r_p, r_n).map_err(compute_error)?;
        let det_p = p.determinant();
        let alpha = geom.alpha(r_p, r_n).map_err(compute_error)?;
        let beta = geom.beta(r_p, r_n).map_err(compute_error)?;
        let entropy = gaussian_entropy(&p).map_err(compute_error)?;
        let in_region = r_n <= r_max;
        out.push_str(&format!(
            "{r_p:.16e},{r_n:.16e},{det_p:.16e},{alpha:.16e},{beta:.16e},{entropy:.16e},{in_region}\n"
        ));
    }
    print!("{out}");
    Ok(())
}

fn cmd_conjecture(cli: &Cli, n: usize, k: usize, trials: usize) -> Result<(), CliError> {
    let params = ConjectureParams {
        n,
        k,
        trials,
        seed: cli.seed.unwrap_or(0),
        tol: cli.tol,
    };
    let report = psd_conjecture_trial(&params).map_err(|e| match e {
        Error::InvalidParameter { .. } => CliError::Validation(e.to_string()),
        other => compute_error(other),
    })?;
    print_json(&ConjectureOutput {
        trials: report.trials,
        violations: report.violations,
        worst_min_eigenvalue: report.worst_min_eigenvalue,
        worst_seed: report.worst_seed,
    })
}

fn cmd_validate(cli: &Cli) -> Result<(), CliError> {
    let doc = read_input(cli)?;
    let tol = cli.tol.or(doc.options.tol);
    let mut reports = Vec::new();
    let mut errors = Vec::new();

    for (index, est) in doc.estimates.iter().enumerate() {
        if est.y.len() != doc.k {
            errors.push(format!(
                "estimate {index}: y has length {}, expected {}",
                est.y.len(),
                doc.k
            ));
            continue;
        }
        if est.e.len() != doc.k || est.e.iter().any(|r| r.len() != doc.k) {
            errors.push(format!("estimate {index}: E must be a {0}x{0} matrix", doc.k));
            continue;
        }
        let flat: Vec<f64> = est.e.iter().flatten().copied().collect();
        let cov = match SymMatrix::new(DMatrix::from_row_slice(doc.k, doc.k, &flat)) {
            Ok(cov) => cov,
            Err(e) => {
                errors.push(format!("estimate {index}: E: {e}"));
                continue;
            }
        };
        let report = check_psd(&cov, tol);
        if !report.is_psd {
            errors.push(format!(
                "estimate {index}: covariance is not positive semidefinite \
                 (min eigenvalue {:e})",
                report.min_eigenvalue
            ));
        }
        reports.push(EstimateReport {
            index,
            is_psd: report.is_psd,
            is_pd: report.is_pd,
            min_eigenvalue: report.min_eigenvalue,
        });
    }

    // component sums and metadata are part of validation, too
    if errors.is_empty() {
        if let Err(e) = doc.to_estimates(cli.tol) {
            errors.push(e.message().to_string());
        }
    }

    let output = ValidateOutput {
        valid: errors.is_empty(),
        k: doc.k,
        n: doc.estimates.len(),
        estimates: reports,
        errors: errors.clone(),
    };
    print_json(&output)?;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::validation(errors.join("; ")))
    }
}
