//! `noisyglm infer`: read a fit directory back, verify the input table is
//! unchanged, and write de-biased estimates with standard errors and
//! confidence intervals plus per-column quality diagnostics for the
//! inverse-Jacobian rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use noisyglm_core::inference::{debias, default_nodewise_lambda, exact_theta, nodewise_theta};
use noisyglm_core::{Dataset, NoiseModel, PsiSpec};

use crate::manifest::{read_manifest, sha256_hex, write_json, InferRecord, Manifest};
use crate::table::{align_coefficients, build_design, read_coefficients, read_table};
use crate::{CliError, LossArg, Result};

/// How to form the inverse-Jacobian rows used by the de-biasing step.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaArg {
    /// Exact inverse when the design is low dimensional and well
    /// conditioned, node-wise lasso otherwise
    Auto,
    /// Exact inverse of the estimating-equation Jacobian
    Exact,
    /// Node-wise lasso rows, required when columns outnumber rows
    Nodewise,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Output directory of a previous `noisyglm fit`
    pub fit_dir: PathBuf,

    /// Two-sided miscoverage level of the intervals
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Inverse-Jacobian construction
    #[arg(long, value_enum, default_value = "auto")]
    pub theta: ThetaArg,

    /// Node-wise lasso penalty; a scale-aware default is derived when
    /// omitted
    #[arg(long)]
    pub nodewise_lambda: Option<f64>,

    /// Output directory, default `<fit_dir>/infer`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &InferArgs) -> Result<i32> {
    let manifest_path = args.fit_dir.join("manifest.json");
    let fit_manifest = read_manifest(&manifest_path)?;
    if fit_manifest.command != "fit" {
        return Err(CliError::Input(format!(
            "{}: produced by `noisyglm {}`, not `noisyglm fit`",
            manifest_path.display(),
            fit_manifest.command
        )));
    }
    let input = fit_manifest
        .input
        .as_ref()
        .ok_or_else(|| CliError::Input(format!("{}: no input record", manifest_path.display())))?;
    let fit_record = fit_manifest
        .fit
        .as_ref()
        .ok_or_else(|| CliError::Input(format!("{}: no fit record", manifest_path.display())))?;

    let input_path = Path::new(&input.path);
    let sha = sha256_hex(input_path)?;
    if sha != input.sha256 {
        return Err(CliError::Input(format!(
            "{}: contents changed since the fit (checksum mismatch); refusing to infer \
             against a different table",
            input_path.display()
        )));
    }
    let label = input.label.as_deref().ok_or_else(|| {
        CliError::Input(format!("{}: fit manifest records no label column", manifest_path.display()))
    })?;

    let table = read_table(input_path)?;
    let built = build_design(&table, Some(label), input.intercept)?;
    if built.names != input.columns {
        return Err(CliError::Input(format!(
            "{}: design columns no longer match the fit manifest",
            input_path.display()
        )));
    }
    let z = built.z.expect("a label column was requested");
    let coeffs = read_coefficients(&args.fit_dir.join("coefficients.csv"))?;
    let beta = align_coefficients(&coeffs, &built.names)?;

    let mut data = Dataset::new(built.x, z)?;
    if input.intercept {
        data = data.with_intercept_col(0)?;
    }
    let nm = NoiseModel::new(fit_record.rho0, fit_record.rho1)?;
    let psi = PsiSpec::new(LossArg::from_manifest(&fit_record.loss)?.kind(), nm);

    let n = data.n();
    let p = data.p();
    let (theta, theta_mode, nodewise_lambda) = match args.theta {
        ThetaArg::Exact => (exact_theta(data.x(), &beta, &psi)?, "exact", None),
        ThetaArg::Nodewise => {
            let (theta, lambda) = nodewise(&data, &beta, &psi, args.nodewise_lambda)?;
            (theta, "nodewise", Some(lambda))
        }
        ThetaArg::Auto => {
            let exact = if p < n { exact_theta(data.x(), &beta, &psi).ok() } else { None };
            match exact {
                Some(theta) => (theta, "exact", None),
                None => {
                    let (theta, lambda) = nodewise(&data, &beta, &psi, args.nodewise_lambda)?;
                    (theta, "nodewise", Some(lambda))
                }
            }
        }
    };

    let report = debias(&data, &beta, &psi, &theta, args.alpha)?;

    let out_dir = args.out.clone().unwrap_or_else(|| args.fit_dir.join("infer"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|source| CliError::Io { path: out_dir.clone(), source })?;

    let mut inference = String::from("name,estimate,debiased,se,ci_low,ci_high\n");
    for (j, name) in built.names.iter().enumerate() {
        writeln!(
            inference,
            "{name},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            beta[j], report.beta_db[j], report.se[j], report.ci_low[j], report.ci_high[j]
        )
        .expect("writing to a string cannot fail");
    }
    let inference_path = out_dir.join("inference.csv");
    std::fs::write(&inference_path, inference)
        .map_err(|source| CliError::Io { path: inference_path.clone(), source })?;

    let mut diag = String::from("name,tau_sq,kkt_residual,theta_l1\n");
    for (name, d) in built.names.iter().zip(&report.theta_diag) {
        writeln!(diag, "{name},{:.16e},{:.16e},{:.16e}", d.tau_sq, d.kkt_residual, d.theta_l1)
            .expect("writing to a string cannot fail");
    }
    let diag_path = out_dir.join("theta_diag.csv");
    std::fs::write(&diag_path, diag)
        .map_err(|source| CliError::Io { path: diag_path, source })?;

    let mut manifest = Manifest::new("infer");
    manifest.input = Some(input.clone());
    manifest.infer = Some(InferRecord {
        fit_dir: args.fit_dir.display().to_string(),
        alpha: args.alpha,
        theta: theta_mode.to_owned(),
        nodewise_lambda,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;

    println!(
        "infer: {p} columns, alpha = {}, inverse-Jacobian rows via {theta_mode}",
        args.alpha
    );
    println!("wrote {}", inference_path.display());
    Ok(0)
}

fn nodewise(
    data: &Dataset,
    beta: &nalgebra::DVector<f64>,
    psi: &PsiSpec,
    lambda: Option<f64>,
) -> Result<(nalgebra::DMatrix<f64>, f64)> {
    let lambda = match lambda {
        Some(l) => l,
        None => default_nodewise_lambda(data.x(), beta, psi)?,
    };
    let lambdas = vec![lambda; data.p()];
    let (theta, _) = nodewise_theta(data.x(), beta, psi, &lambdas)?;
    Ok((theta, lambda))
}
