//! `noisyglm fit`: estimate coefficients from a CSV table and write
//! `coefficients.csv`, `trace.csv` and `manifest.json` into the output
//! directory. Exit code 0 on convergence, 3 when the iteration budget ran
//! out (outputs are still written), 2 on malformed input.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use nalgebra::DVector;

use noisyglm_core::optim::{cv_select_lambda, default_lambda_grid, fit, lambda_max};
use noisyglm_core::{Dataset, FitConfig, FitResult, Termination};

use crate::manifest::{
    sha256_hex, term_str, write_json, CvRecord, FitRecord, InputRecord, Manifest,
};
use crate::table::{build_design, read_table};
use crate::{CliError, LossArg, NoiseFlags, Result, EXIT_NO_CONVERGE};

#[derive(Args, Debug)]
pub struct FitArgs {
    /// CSV table with a header row of column names
    pub input: PathBuf,

    /// Name of the 0/1 response column
    #[arg(long)]
    pub label: String,

    #[command(flatten)]
    pub noise: NoiseFlags,

    /// Loss to minimize
    #[arg(long, value_enum, default_value = "sur")]
    pub loss: LossArg,

    /// Fixed ell_1 penalty level; 0 fits unpenalized
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,

    /// Select the penalty by K-fold cross validation over a built-in grid
    #[arg(long, value_name = "FOLDS")]
    pub cv: Option<usize>,

    /// Radius of the coefficient ball for the likelihood loss; derived
    /// from a surrogate pilot fit when omitted
    #[arg(long)]
    pub radius: Option<f64>,

    /// Comma-separated column names exempt from the penalty (the intercept
    /// always is)
    #[arg(long, value_delimiter = ',')]
    pub unpenalized: Vec<String>,

    /// Fit without a prepended intercept column
    #[arg(long)]
    pub no_intercept: bool,

    /// Recorded in the manifest; the fit itself draws no random numbers
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Solver iteration budget
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,

    /// Stop when the proximal-gradient-map norm falls below this
    #[arg(long)]
    pub tol_gradmap: Option<f64>,

    /// Stop when the relative objective decrease falls below this
    #[arg(long)]
    pub tol_obj: Option<f64>,

    /// Output directory
    #[arg(long, default_value = "noisyglm-out")]
    pub out: PathBuf,
}

pub fn run(args: &FitArgs) -> Result<i32> {
    let table = read_table(&args.input)?;
    let built = build_design(&table, Some(&args.label), !args.no_intercept)?;
    let z = built.z.expect("a label column was requested");
    let noise = crate::resolve_noise(&args.noise)?;

    let mut data = Dataset::new(built.x, z)?;
    if !args.no_intercept {
        data = data.with_intercept_col(0)?;
    }

    let mut cfg = FitConfig::new(args.loss.kind());
    cfg.max_iter = args.max_iter;
    if let Some(t) = args.tol_gradmap {
        cfg.tol_gradmap = Some(t);
    }
    if let Some(t) = args.tol_obj {
        cfg.tol_obj = t;
    }
    if let Some(r) = args.radius {
        cfg = cfg.with_radius(r);
    }
    cfg.unpenalized = resolve_unpenalized(&args.unpenalized, &built.names)?;

    let cv_record = match args.cv {
        None => None,
        Some(folds) => {
            let lmax = lambda_max(&data, &noise.nm, &cfg)?;
            let grid = default_lambda_grid(lmax)?;
            let (selected, curve) = cv_select_lambda(&data, &noise.nm, &cfg, folds, &grid)?;
            Some(CvRecord { folds, selected, grid, curve })
        }
    };
    cfg.lambda = match (&cv_record, args.lambda) {
        (Some(cv), _) => cv.selected,
        (None, Some(l)) => l,
        (None, None) => 0.0,
    };

    let result = fit(&data, &noise.nm, &cfg)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|source| CliError::Io { path: args.out.clone(), source })?;
    write_coefficients(&args.out.join("coefficients.csv"), &built.names, &result.beta)?;
    write_trace(&args.out.join("trace.csv"), &result.objective_trace)?;

    let mut manifest = Manifest::new("fit");
    manifest.seed = Some(args.seed);
    manifest.rng = Some("chacha8".to_owned());
    manifest.input = Some(InputRecord {
        path: args.input.display().to_string(),
        sha256: sha256_hex(&args.input)?,
        n: data.n(),
        p: data.p(),
        label: Some(args.label.clone()),
        intercept: !args.no_intercept,
        columns: built.names.clone(),
    });
    manifest.fit = Some(FitRecord {
        loss: args.loss.as_str().to_owned(),
        rho0: noise.nm.rho0(),
        rho1: noise.nm.rho1(),
        pu: noise.pu,
        gamma: noise.gamma,
        lambda: cfg.lambda,
        cv: cv_record,
        radius: args.radius,
        unpenalized: args.unpenalized.clone(),
        max_iter: cfg.max_iter,
        tol_obj: cfg.tol_obj,
        tol_gradmap: cfg.tol_gradmap,
        termination: term_str(result.termination).to_owned(),
        iterations: result.iterations,
        objective: result.objective,
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;

    report(args, &noise, &cfg, &result);
    if result.termination == Termination::MaxIter {
        eprintln!(
            "warning: stopped at the iteration budget ({}) before reaching tolerance",
            result.iterations
        );
        Ok(EXIT_NO_CONVERGE)
    } else {
        Ok(0)
    }
}

fn resolve_unpenalized(names: &[String], columns: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            columns.iter().position(|c| c == name).ok_or_else(|| {
                CliError::Input(format!(
                    "--unpenalized column {name:?} is not a design column; available: {}",
                    columns.join(", ")
                ))
            })
        })
        .collect()
}

fn write_coefficients(path: &std::path::Path, names: &[String], beta: &DVector<f64>) -> Result<()> {
    let mut out = String::from("name,estimate\n");
    for (name, value) in names.iter().zip(beta.iter()) {
        writeln!(out, "{name},{value:.16e}").expect("writing to a string cannot fail");
    }
    std::fs::write(path, out).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn write_trace(path: &std::path::Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("iter,objective\n");
    for (iter, value) in trace.iter().enumerate() {
        writeln!(out, "{iter},{value:.16e}").expect("writing to a string cannot fail");
    }
    std::fs::write(path, out).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn report(args: &FitArgs, noise: &crate::ResolvedNoise, cfg: &FitConfig, result: &FitResult) {
    let objective = result.objective;
    println!(
        "fit ({}): rho0 = {:.6}, rho1 = {:.6}, lambda = {:.6e}",
        args.loss.as_str(),
        noise.nm.rho0(),
        noise.nm.rho1(),
        cfg.lambda
    );
    if let Some(gamma) = noise.gamma {
        println!("positive-unlabeled intercept offset gamma = {gamma:.6}");
    }
    println!(
        "{} after {} iterations, objective {objective:.10e}",
        term_str(result.termination),
        result.iterations
    );
    println!("wrote {}", args.out.join("coefficients.csv").display());
}
