//! Shared oracles for the integration and acceptance tests: an independent
//! Newton/IRLS logistic solver, central finite differences, and dataset
//! simulation helpers built on the library's own generators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use noisyglm_core::simgen::{flip_labels, gen_design, gen_labels};
use noisyglm_core::{Ar1Cov, Dataset, Design, NoiseModel};

/// Logistic maximum likelihood by damped Newton iteration with explicit
/// Hessian solves; written directly from the score equations so it shares
/// no code with the proximal-gradient solver under test.
pub fn irls_logistic(x: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut beta: DVector<f64> = DVector::zeros(p);
    for _ in 0..200 {
        let t = x * &beta;
        let mu = t.map(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = x.transpose() * (&mu - z) / n as f64;
        let weights = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let hess = x.transpose() * DMatrix::from_diagonal(&weights) * x / n as f64;
        let delta = hess.lu().solve(&grad).expect("newton system is solvable");
        beta -= &delta;
        if delta.norm() < 1e-13 {
            break;
        }
    }
    beta
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    beta: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let p = beta.len();
    DVector::from_fn(p, |j, _| {
        let mut hi = beta.clone();
        let mut lo = beta.clone();
        hi[j] += h;
        lo[j] -= h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    })
}

pub fn mixture_design(separation: f64) -> Design {
    Design::Mixture { cov: Ar1Cov { rho: 0.2, scale: 1.0 }, separation }
}

pub fn gaussian_design() -> Design {
    Design::Gaussian { cov: Ar1Cov { rho: 0.2, scale: 1.0 } }
}

/// Draws a design, clean labels at `beta0`, and channel-noised labels;
/// returns the dataset carrying both label vectors.
pub fn sim_dataset(
    n: usize,
    design: &Design,
    beta0: &DVector<f64>,
    nm: &NoiseModel,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gen_design(n, beta0.len(), design, &mut rng).expect("valid dimensions");
    let y = gen_labels(&x, beta0, &mut rng).expect("matching dimensions");
    let z = flip_labels(&y, nm, &mut rng);
    Dataset::new(x, z)
        .expect("finite design")
        .with_clean_labels(y)
        .expect("matching labels")
}

/// Random coefficient vector with entries uniform in `[-scale, scale]`.
pub fn random_beta<R: Rng>(p: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.random_range(-scale..scale))
}

pub fn noise(rho0: f64, rho1: f64) -> NoiseModel {
    NoiseModel::new(rho0, rho1).expect("valid rates")
}
