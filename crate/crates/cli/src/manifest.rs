//! The manifest written next to every command's outputs: schema tag,
//! creation time, resolved configuration, and checksums of the inputs the
//! result depends on. `infer` reads a fit manifest back to rebuild the
//! design exactly as the fit saw it.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use noisyglm_core::{PuSpec, StudySpec, Termination};

use crate::{CliError, Result};

pub const SCHEMA: &str = "noisyglm/1";

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub created_at: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infer: Option<InferRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyRecord>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            schema: SCHEMA.to_owned(),
            command: command.to_owned(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: None,
            rng: None,
            input: None,
            fit: None,
            infer: None,
            gap: None,
            study: None,
        }
    }
}

/// The table a command consumed, pinned by checksum, with the resolved
/// design column order so downstream commands can verify alignment.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub intercept: bool,
    pub columns: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FitRecord {
    pub loss: String,
    pub rho0: f64,
    pub rho1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pu: Option<PuSpec>,
    /// Case-control intercept offset implied by a positive-unlabeled plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub unpenalized: Vec<String>,
    pub max_iter: usize,
    pub tol_obj: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_gradmap: Option<f64>,
    pub termination: String,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct CvRecord {
    pub folds: usize,
    pub selected: f64,
    pub grid: Vec<f64>,
    /// Mean held-out loss per grid point, same order as `grid`.
    pub curve: Vec<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct InferRecord {
    pub fit_dir: String,
    pub alpha: f64,
    /// Which inverse-Jacobian route was used: "exact" or "nodewise".
    pub theta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodewise_lambda: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct GapRecord {
    pub rho0: f64,
    pub rho1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pu: Option<PuSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub beta_path: String,
    pub beta_sha256: String,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct StudyRecord {
    pub config_path: String,
    pub config_sha256: String,
    pub spec: StudySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub wall_time_secs: f64,
}

pub fn term_str(t: Termination) -> &'static str {
    match t {
        Termination::GradMapTol => "grad_map_tol",
        Termination::ObjTol => "obj_tol",
        Termination::MaxIter => "max_iter",
    }
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file =
        File::open(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let read = file
            .read(&mut buf)
            .map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a string cannot fail");
    }
    Ok(hex)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| CliError::Json { path: path.to_owned(), source })?;
    std::fs::write(path, text + "\n")
        .map_err(|source| CliError::Io { path: path.to_owned(), source })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|source| CliError::Json { path: path.to_owned(), source })?;
    if manifest.schema != SCHEMA {
        return Err(CliError::Input(format!(
            "{}: schema {:?} is not {SCHEMA:?}",
            path.display(),
            manifest.schema
        )));
    }
    Ok(manifest)
}
