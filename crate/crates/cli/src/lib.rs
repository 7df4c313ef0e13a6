//! Command-line front end for the noisy-label regression library: `fit`
//! estimates coefficients from a CSV table, `infer` de-biases a stored fit
//! and attaches confidence intervals, `gap` reports the efficiency
//! comparison between the two losses at a given coefficient vector, and
//! `study` runs a Monte-Carlo study from a JSON configuration.
//!
//! Every command writes its outputs into a directory containing exactly one
//! `manifest.json` that records the resolved configuration and input
//! checksums, so a result can always be traced back to its inputs.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noisyglm_core::simgen::{case_control_gamma, pu_noise_rates};
use noisyglm_core::{LossKind, NoiseModel, PuSpec};

pub mod cmd_fit;
pub mod cmd_gap;
pub mod cmd_infer;
pub mod cmd_study;
pub mod manifest;
pub mod table;

/// Exit code for malformed input or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for a fit that hit its iteration budget; outputs are still
/// written.
pub const EXIT_NO_CONVERGE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] noisyglm_core::Error),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "noisyglm",
    version,
    about = "Logistic regression under class-conditional label noise",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a penalized regression on a CSV table of numeric columns
    Fit(cmd_fit::FitArgs),
    /// De-bias a stored fit and report standard errors and intervals
    Infer(cmd_infer::InferArgs),
    /// Compare the efficiency of the two losses at a coefficient vector
    Gap(cmd_gap::GapArgs),
    /// Run a Monte-Carlo study from a JSON configuration
    Study(cmd_study::StudyArgs),
}

/// Which loss the solver minimizes.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossArg {
    /// Non-convex composite likelihood of the noisy labels
    Lik,
    /// Convex surrogate on conditionally unbiased relabeled responses
    Sur,
}

impl LossArg {
    pub fn kind(self) -> LossKind {
        match self {
            LossArg::Lik => LossKind::Likelihood,
            LossArg::Sur => LossKind::Surrogate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossArg::Lik => "lik",
            LossArg::Sur => "sur",
        }
    }

    pub fn from_manifest(s: &str) -> Result<Self> {
        match s {
            "lik" => Ok(LossArg::Lik),
            "sur" => Ok(LossArg::Sur),
            other => Err(CliError::Input(format!("manifest records unknown loss {other:?}"))),
        }
    }
}

/// Label-noise flags shared by `fit` and `gap`: either explicit flip rates
/// or the positive-unlabeled triple, not both.
#[derive(Args, Debug, Clone)]
pub struct NoiseFlags {
    /// False-positive rate P(z=1 | y=0), default 0
    #[arg(long)]
    pub rho0: Option<f64>,
    /// False-negative rate P(z=0 | y=1), default 0
    #[arg(long)]
    pub rho1: Option<f64>,
    /// Positive prevalence of the unlabeled pool in a positive-unlabeled
    /// design; needs --pu-nl and --pu-nu
    #[arg(long)]
    pub pu_pi: Option<f64>,
    /// Number of screened labeled positives in a positive-unlabeled design
    #[arg(long)]
    pub pu_nl: Option<usize>,
    /// Number of unlabeled rows in a positive-unlabeled design
    #[arg(long)]
    pub pu_nu: Option<usize>,
}

/// Noise flags after validation: the channel itself plus, for the
/// positive-unlabeled route, the plan and the case-control intercept
/// offset implied by it.
#[derive(Debug, Clone)]
pub struct ResolvedNoise {
    pub nm: NoiseModel,
    pub pu: Option<PuSpec>,
    pub gamma: Option<f64>,
}

pub fn resolve_noise(flags: &NoiseFlags) -> Result<ResolvedNoise> {
    let any_pu = flags.pu_pi.is_some() || flags.pu_nl.is_some() || flags.pu_nu.is_some();
    if any_pu {
        if flags.rho0.is_some() || flags.rho1.is_some() {
            return Err(CliError::Input(
                "--rho0/--rho1 cannot be combined with the --pu-* flags; the \
                 positive-unlabeled design determines both rates"
                    .into(),
            ));
        }
        let (Some(pi), Some(n_labeled), Some(n_unlabeled)) = (flags.pu_pi, flags.pu_nl, flags.pu_nu)
        else {
            return Err(CliError::Input(
                "the positive-unlabeled design needs all of --pu-pi, --pu-nl and --pu-nu".into(),
            ));
        };
        let pu = PuSpec { pi, n_labeled, n_unlabeled };
        let nm = pu_noise_rates(&pu)?;
        let gamma = case_control_gamma(&pu)?;
        Ok(ResolvedNoise { nm, pu: Some(pu), gamma: Some(gamma) })
    } else {
        let nm = NoiseModel::new(flags.rho0.unwrap_or(0.0), flags.rho1.unwrap_or(0.0))?;
        Ok(ResolvedNoise { nm, pu: None, gamma: None })
    }
}

/// Runs one parsed command, printing any diagnostic to stderr, and returns
/// the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Fit(args) => cmd_fit::run(args),
        Command::Infer(args) => cmd_infer::run(args),
        Command::Gap(args) => cmd_gap::run(args),
        Command::Study(args) => cmd_study::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
