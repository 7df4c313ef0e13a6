//! Synthetic data generation for the simulation studies: correlated
//! Gaussian and two-component mixture designs, clean labels from the
//! logistic model, channel-corrupted labels, and the arithmetic that maps
//! positive-unlabeled sampling plans onto noise rates.
//!
//! Every generator takes an explicit RNG and draws in a fixed order (row by
//! row, one value per slot), so results are reproducible from a seed alone
//! and independent of threading. Seeds for parallel replications come from
//! [`derive_seed`], which gives well-separated streams from one master
//! seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, NoiseModel};

/// First-order autoregressive covariance: entry `(i, j)` equals
/// `scale * rho^|i - j|`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Ar1Cov {
    pub rho: f64,
    pub scale: f64,
}

impl Ar1Cov {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "autoregressive correlation {} must lie in (-1, 1)",
                self.rho
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "covariance scale {} must be positive and finite",
                self.scale
            )));
        }
        Ok(())
    }

    /// Quadratic form `beta' Sigma beta` under this covariance.
    pub fn quad_form(&self, beta: &DVector<f64>) -> f64 {
        let p = beta.len();
        let mut total = 0.0;
        for i in 0..p {
            for j in 0..p {
                total += beta[i] * beta[j] * self.scale * self.rho.powi((i as i32 - j as i32).abs());
            }
        }
        total
    }
}

/// Row distribution of the design matrix.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// Centered Gaussian rows with AR(1) covariance.
    Gaussian { cov: Ar1Cov },
    /// Equal mixture of Gaussians centered at `+(d, .., d)` and
    /// `-(d, .., d)` with shared AR(1) covariance; `separation` is `d`.
    Mixture { cov: Ar1Cov, separation: f64 },
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        match self {
            Design::Gaussian { cov } => cov.validate(),
            Design::Mixture { cov, separation } => {
                cov.validate()?;
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "mixture separation {separation} must be finite and >= 0"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn cov(&self) -> &Ar1Cov {
        match self {
            Design::Gaussian { cov } => cov,
            Design::Mixture { cov, .. } => cov,
        }
    }
}

/// Samples an `n` by `p` design. AR(1) rows are built by the stationary
/// recursion `x_1 = sqrt(scale) e_1`,
/// `x_j = rho x_{j-1} + sqrt(scale (1 - rho^2)) e_j`, which realizes the
/// exact covariance in O(n p) work. For mixtures, each row first draws its
/// component sign, then its `p` innovations.
pub fn gen_design<R: Rng>(n: usize, p: usize, design: &Design, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidConfig(format!("design dimensions {n} x {p} must be positive")));
    }
    design.validate()?;
    let cov = design.cov();
    let sd = cov.scale.sqrt();
    let innov = sd * (1.0 - cov.rho * cov.rho).sqrt();

    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let center = match design {
            Design::Gaussian { .. } => 0.0,
            Design::Mixture { separation, .. } => {
                if rng.random::<f64>() < 0.5 {
                    *separation
                } else {
                    -separation
                }
            }
        };
        let mut prev = sd * rng.sample::<f64, _>(StandardNormal);
        x[(i, 0)] = prev + center;
        for j in 1..p {
            let next = cov.rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
            x[(i, j)] = next + center;
            prev = next;
        }
    }
    Ok(x)
}

/// Draws clean binary labels from the logistic model at `beta`.
pub fn gen_labels<R: Rng>(x: &DMatrix<f64>, beta: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {} but the design has {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    let t = x * beta;
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        if rng.random::<f64>() < glm::mean_y(t[i]) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Sends clean labels through the misclassification channel using one
/// uniform draw per element, in index order.
pub fn flip_labels<R: Rng>(y: &DVector<f64>, nm: &NoiseModel, rng: &mut R) -> DVector<f64> {
    let u: Vec<f64> = (0..y.len()).map(|_| rng.random::<f64>()).collect();
    flip_labels_with(y, nm, &u)
}

/// Channel map with the uniforms supplied explicitly. Element `i` depends
/// only on `(y[i], u[i])`, so the map commutes with any joint permutation
/// of labels and uniforms.
pub fn flip_labels_with(y: &DVector<f64>, nm: &NoiseModel, u: &[f64]) -> DVector<f64> {
    assert_eq!(y.len(), u.len(), "one uniform per label");
    DVector::from_fn(y.len(), |i, _| {
        if y[i] == 1.0 {
            if u[i] < nm.rho1() {
                0.0
            } else {
                1.0
            }
        } else if u[i] < nm.rho0() {
            1.0
        } else {
            0.0
        }
    })
}

/// Positive-unlabeled sampling plan: `n_labeled` screened positives pooled
/// with `n_unlabeled` draws whose positive prevalence is `pi`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PuSpec {
    pub pi: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
}

impl PuSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "positive prevalence {} must lie in (0, 1)",
                self.pi
            )));
        }
        if self.n_labeled == 0 || self.n_unlabeled == 0 {
            return Err(Error::InvalidConfig(
                "both the labeled and unlabeled sample counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Noise rates induced by a positive-unlabeled sampling plan: no false
/// positives, and true positives among the unlabeled pool are observed as
/// zeros at rate `pi n_u / (n_l + pi n_u)`.
pub fn pu_noise_rates(spec: &PuSpec) -> Result<NoiseModel> {
    spec.validate()?;
    let mass = spec.pi * spec.n_unlabeled as f64;
    NoiseModel::new(0.0, mass / (spec.n_labeled as f64 + mass))
}

/// Intercept offset induced by case-control sampling in the
/// positive-unlabeled plan: `log(1 + n_l / (pi n_u))`, which is the
/// negative log of the corresponding false-negative rate. Only the
/// intercept coordinate differs between the offset and plain schemes.
pub fn case_control_gamma(spec: &PuSpec) -> Result<f64> {
    let nm = pu_noise_rates(spec)?;
    Ok(-nm.rho1().ln())
}

/// Multiplier for the covariance scale so that the linear predictor
/// variance `beta' Sigma beta` hits `target`.
pub fn scale_covariance_for_signal(beta: &DVector<f64>, cov: &Ar1Cov, target: f64) -> Result<f64> {
    cov.validate()?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidConfig(format!("signal variance target {target} must be positive")));
    }
    let qf = cov.quad_form(beta);
    if qf <= 0.0 {
        return Err(Error::InvalidConfig(
            "the coefficient vector carries no signal under this covariance".into(),
        ));
    }
    Ok(target / qf)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` derived from `master`: the `(stream + 1)`-th
/// output of a splitmix64 generator seeded at `master`, computed in O(1)
/// by jumping the additive state.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut state =
        master.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(&mut state)
}
