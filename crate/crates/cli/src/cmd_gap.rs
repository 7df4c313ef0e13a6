//! `noisyglm gap`: evaluate both Fisher-information routes at a given
//! coefficient vector and report the weighted subspace gap, the relative
//! efficiency difference, per-route asymptotic mean squared errors, and the
//! two sides of the bound tying the difference to the gap.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use noisyglm_core::inference::{cor1_bound_check, dependent_columns, info_matrices};

use crate::manifest::{sha256_hex, write_json, GapRecord, InputRecord, Manifest};
use crate::table::{align_coefficients, build_design, read_coefficients, read_table};
use crate::{CliError, NoiseFlags, Result};

#[derive(Args, Debug)]
pub struct GapArgs {
    /// CSV table holding the design; a label column, if present, is
    /// dropped via --label
    pub input: PathBuf,

    /// Coefficient file (`name,estimate`) to evaluate at, as written by
    /// `noisyglm fit`
    #[arg(long)]
    pub beta: PathBuf,

    /// Response column to drop from the design
    #[arg(long)]
    pub label: Option<String>,

    #[command(flatten)]
    pub noise: NoiseFlags,

    /// Evaluate without a prepended intercept column
    #[arg(long)]
    pub no_intercept: bool,

    /// Output directory
    #[arg(long, default_value = "noisyglm-gap")]
    pub out: PathBuf,
}

pub fn run(args: &GapArgs) -> Result<i32> {
    let table = read_table(&args.input)?;
    let built = build_design(&table, args.label.as_deref(), !args.no_intercept)?;
    let coeffs = read_coefficients(&args.beta)?;
    let beta = align_coefficients(&coeffs, &built.names)?;
    let noise = crate::resolve_noise(&args.noise)?;

    let dependent = dependent_columns(&built.x);
    if !dependent.is_empty() {
        let names: Vec<&str> = dependent.iter().map(|&j| built.names[j].as_str()).collect();
        return Err(CliError::Input(format!(
            "design columns are linearly dependent: {}; drop them and rerun",
            names.join(", ")
        )));
    }

    let info = info_matrices(&built.x, &beta, &noise.nm)?;
    let (bound_lhs, bound_rhs) = cor1_bound_check(&built.x, &beta, &noise.nm)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|source| CliError::Io { path: args.out.clone(), source })?;
    let mut csv = String::from("metric,value\n");
    for (metric, value) in [
        ("gap", info.gap),
        ("gap_sq", info.gap * info.gap),
        ("rd", info.rel_l2_diff),
        ("one_minus_rd", 1.0 - info.rel_l2_diff),
        ("amse_lik", info.amse_lik),
        ("amse_sur", info.amse_sur),
        ("bound_lhs", bound_lhs),
        ("bound_rhs", bound_rhs),
    ] {
        writeln!(csv, "{metric},{value:.16e}").expect("writing to a string cannot fail");
    }
    let csv_path = args.out.join("gap.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|source| CliError::Io { path: csv_path.clone(), source })?;

    let mut manifest = Manifest::new("gap");
    manifest.input = Some(InputRecord {
        path: args.input.display().to_string(),
        sha256: sha256_hex(&args.input)?,
        n: built.x.nrows(),
        p: built.x.ncols(),
        label: args.label.clone(),
        intercept: !args.no_intercept,
        columns: built.names.clone(),
    });
    manifest.gap = Some(GapRecord {
        rho0: noise.nm.rho0(),
        rho1: noise.nm.rho1(),
        pu: noise.pu,
        gamma: noise.gamma,
        beta_path: args.beta.display().to_string(),
        beta_sha256: sha256_hex(&args.beta)?,
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;

    println!(
        "gap = {:.6e}, relative efficiency difference = {:.6e}",
        info.gap, info.rel_l2_diff
    );
    println!(
        "asymptotic mse: likelihood {:.6e}, surrogate {:.6e}",
        info.amse_lik, info.amse_sur
    );
    println!("wrote {}", csv_path.display());
    Ok(0)
}
