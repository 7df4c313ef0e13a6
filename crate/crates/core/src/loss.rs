//! Empirical losses for the two estimation routes.
//!
//! The likelihood route evaluates the logistic negative log-likelihood of the
//! noisy labels through the composite link `h`. The surrogate route first
//! maps each label through the conditionally unbiased relabeling
//! `(z - b) / a` and then uses the ordinary logistic loss, which keeps the
//! objective convex at the price of statistical efficiency.
//!
//! Both losses are averages of per-observation terms in the linear predictor
//! `t_i = x_i' beta`. Evaluation makes one matrix-vector pass to form the
//! predictors, applies scalar maps per observation, and accumulates in a
//! fixed order so repeated runs are bitwise reproducible. Curvature is
//! reported as per-observation weights rather than a dense matrix: the
//! second derivative of each term splits into a nonnegative part `rho_i` and
//! a sign-indefinite part `rho_r` that vanishes for the surrogate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, NoiseModel};

/// Which of the two objectives to evaluate or minimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Likelihood,
    Surrogate,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Likelihood => "lik",
            LossKind::Surrogate => "sur",
        })
    }
}

/// Design matrix with binary responses and optional metadata.
///
/// `intercept_col` marks a column that fit configurations leave unpenalized
/// by default. `y_clean` optionally carries noise-free labels; simulated data
/// keeps them around for diagnostics that need the latent truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    z: DVector<f64>,
    intercept_col: Option<usize>,
    y_clean: Option<DVector<f64>>,
}

fn check_binary(v: &DVector<f64>, name: &str) -> Result<()> {
    for (i, &zi) in v.iter().enumerate() {
        if zi != 0.0 && zi != 1.0 {
            return Err(Error::InvalidData(format!("{name}[{i}] = {zi}, labels must be 0 or 1")));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidData("design matrix must have at least one row and column".into()));
        }
        if z.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                z.len(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design matrix contains a non-finite entry".into()));
        }
        check_binary(&z, "z")?;
        Ok(Self { x, z, intercept_col: None, y_clean: None })
    }

    /// Marks `col` as the intercept column. The column contents are not
    /// altered; the flag only controls default penalization exemptions.
    pub fn with_intercept_col(mut self, col: usize) -> Result<Self> {
        if col >= self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "intercept column {col} out of range for p = {}",
                self.x.ncols()
            )));
        }
        self.intercept_col = Some(col);
        Ok(self)
    }

    /// Attaches the noise-free labels alongside the observed ones.
    pub fn with_clean_labels(mut self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} clean labels for {} rows",
                y.len(),
                self.x.nrows()
            )));
        }
        check_binary(&y, "y")?;
        self.y_clean = Some(y);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn intercept_col(&self) -> Option<usize> {
        self.intercept_col
    }

    pub fn y_clean(&self) -> Option<&DVector<f64>> {
        self.y_clean.as_ref()
    }

    /// Linear predictors `X beta` after a dimension check.
    pub fn linear_predictor(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {} but the design has {} columns",
                beta.len(),
                self.x.ncols()
            )));
        }
        Ok(&self.x * beta)
    }
}

/// Per-observation curvature weights. The second derivative of observation
/// `i`'s loss term is `rho_i[i] + rho_r[i]`; `rho_i` is always nonnegative
/// while `rho_r` carries the label residual and can take either sign. For
/// the surrogate loss `rho_r` is identically zero.
#[derive(Clone, Debug)]
pub struct HessianTerms {
    pub rho_i: DVector<f64>,
    pub rho_r: DVector<f64>,
}

/// Value, gradient and optional curvature weights of one loss at one point.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian_terms: Option<HessianTerms>,
}

fn mean_in_order(terms: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for &v in terms.iter() {
        acc += v;
    }
    acc / terms.len() as f64
}

/// Loss value alone, for line searches that do not need the gradient.
pub fn loss_value(kind: LossKind, beta: &DVector<f64>, data: &Dataset, nm: &NoiseModel) -> Result<f64> {
    let t = data.linear_predictor(beta)?;
    let mut terms = DVector::zeros(data.n());
    match kind {
        LossKind::Likelihood => {
            for i in 0..data.n() {
                let h = glm::h_ln(t[i], nm).h;
                terms[i] = glm::log1pexp(h) - data.z[i] * h;
            }
        }
        LossKind::Surrogate => {
            for i in 0..data.n() {
                let target = glm::surrogate_target(data.z[i], nm);
                terms[i] = glm::log1pexp(t[i]) - target * t[i];
            }
        }
    }
    Ok(mean_in_order(&terms))
}

/// Full evaluation of either loss. With `with_hessian` the per-observation
/// curvature weights are filled in; otherwise only value and gradient are
/// computed.
pub fn loss_eval(
    kind: LossKind,
    beta: &DVector<f64>,
    data: &Dataset,
    nm: &NoiseModel,
    with_hessian: bool,
) -> Result<LossEval> {
    let t = data.linear_predictor(beta)?;
    let n = data.n();
    let mut terms = DVector::zeros(n);
    let mut resid = DVector::zeros(n);
    let mut rho_i = if with_hessian { Some(DVector::zeros(n)) } else { None };
    let mut rho_r = if with_hessian { Some(DVector::zeros(n)) } else { None };

    match kind {
        LossKind::Likelihood => {
            for i in 0..n {
                let d = glm::h_ln(t[i], nm);
                let mz = glm::mean_y(d.h);
                terms[i] = glm::log1pexp(d.h) - data.z[i] * d.h;
                resid[i] = (mz - data.z[i]) * d.h1;
                if let (Some(ri), Some(rr)) = (rho_i.as_mut(), rho_r.as_mut()) {
                    let var_z = mz * glm::mean_y(-d.h);
                    ri[i] = var_z * d.h1 * d.h1;
                    rr[i] = (mz - data.z[i]) * d.h2;
                }
            }
        }
        LossKind::Surrogate => {
            for i in 0..n {
                let target = glm::surrogate_target(data.z[i], nm);
                let mu = glm::mean_y(t[i]);
                terms[i] = glm::log1pexp(t[i]) - target * t[i];
                resid[i] = mu - target;
                if let Some(ri) = rho_i.as_mut() {
                    ri[i] = mu * glm::mean_y(-t[i]);
                }
            }
        }
    }

    let value = mean_in_order(&terms);
    let gradient = data.x.tr_mul(&resid) / n as f64;
    let hessian_terms = match (rho_i, rho_r) {
        (Some(rho_i), Some(rho_r)) => Some(HessianTerms { rho_i, rho_r }),
        _ => None,
    };
    Ok(LossEval { value, gradient, hessian_terms })
}

/// Likelihood loss with curvature weights included.
pub fn loss_lik(beta: &DVector<f64>, data: &Dataset, nm: &NoiseModel) -> Result<LossEval> {
    loss_eval(LossKind::Likelihood, beta, data, nm, true)
}

/// Surrogate loss with curvature weights included.
pub fn loss_sur(beta: &DVector<f64>, data: &Dataset, nm: &NoiseModel) -> Result<LossEval> {
    loss_eval(LossKind::Surrogate, beta, data, nm, true)
}

/// Monte-Carlo check that the surrogate loss is unbiased for the clean
/// logistic loss: averages the surrogate loss over replicated noisy-label
/// draws and returns the absolute gap to the clean-label logistic loss at the
/// same `beta`. The dataset must carry clean labels; `z_draws` supplies the
/// replicated labels, one vector per draw.
pub fn unbiasedness_check(
    beta: &DVector<f64>,
    data: &Dataset,
    nm: &NoiseModel,
    z_draws: &[DVector<f64>],
) -> Result<f64> {
    let y = data.y_clean().ok_or(Error::MissingCleanLabels)?;
    if z_draws.is_empty() {
        return Err(Error::InvalidData("need at least one replicated label draw".into()));
    }
    let t = data.linear_predictor(beta)?;

    let mut clean = DVector::zeros(data.n());
    for i in 0..data.n() {
        clean[i] = glm::log1pexp(t[i]) - y[i] * t[i];
    }
    let clean_value = mean_in_order(&clean);

    let mut acc = 0.0;
    for (r, z) in z_draws.iter().enumerate() {
        if z.len() != data.n() {
            return Err(Error::DimensionMismatch(format!(
                "draw {r} has {} labels for {} rows",
                z.len(),
                data.n()
            )));
        }
        check_binary(z, "z_draw")?;
        let mut terms = DVector::zeros(data.n());
        for i in 0..data.n() {
            let target = glm::surrogate_target(z[i], nm);
            terms[i] = glm::log1pexp(t[i]) - target * t[i];
        }
        acc += mean_in_order(&terms);
    }
    Ok((acc / z_draws.len() as f64 - clean_value).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    // Frozen from a 50-digit evaluation of the defining formulas at t = 0.9
    // under rates (0.1, 0.05).
    const LLIK_09_Z1: f64 = 0.350540828678031422;
    const LLIK_09_Z0: f64 = 1.218433786232421508;
    const LSUR_09_Z1: f64 = 0.288212698261499588;
    const LSUR_09_Z0: f64 = 1.347036227673264294;

    fn nm(r0: f64, r1: f64) -> NoiseModel {
        NoiseModel::new(r0, r1).unwrap()
    }

    fn random_data(n: usize, p: usize, seed: u64, m: &NoiseModel) -> (Dataset, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta0 = DVector::from_fn(p, |j, _| 0.5 - 0.1 * j as f64);
        let z = DVector::from_fn(n, |i, _| {
            let pr = glm::mean_z(x.row(i).dot(&beta0.transpose()), m);
            if rng.random::<f64>() < pr {
                1.0
            } else {
                0.0
            }
        });
        let beta = DVector::from_fn(p, |j, _| 0.3 * (j as f64 + 1.0).sin());
        (Dataset::new(x, z).unwrap(), beta)
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let z = DVector::from_vec(vec![0.0, 1.0]);
        let d = Dataset::new(x.clone(), z.clone()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);

        assert!(Dataset::new(x.clone(), DVector::from_vec(vec![0.0, 2.0])).is_err());
        assert!(Dataset::new(x.clone(), DVector::from_vec(vec![0.0])).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(Dataset::new(bad, z.clone()).is_err());

        assert!(Dataset::new(x.clone(), z.clone()).unwrap().with_intercept_col(2).is_err());
        assert_eq!(
            Dataset::new(x.clone(), z.clone()).unwrap().with_intercept_col(0).unwrap().intercept_col(),
            Some(0)
        );
        assert!(Dataset::new(x, z).unwrap().with_clean_labels(DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn pointwise_values_match_frozen() {
        let m = nm(0.1, 0.05);
        let x = DMatrix::from_row_slice(1, 1, &[0.9]);
        let beta = DVector::from_vec(vec![1.0]);
        for (z, lik, sur) in [(1.0, LLIK_09_Z1, LSUR_09_Z1), (0.0, LLIK_09_Z0, LSUR_09_Z0)] {
            let d = Dataset::new(x.clone(), DVector::from_vec(vec![z])).unwrap();
            assert_relative_eq!(loss_lik(&beta, &d, &m).unwrap().value, lik, max_relative = 1e-14);
            assert_relative_eq!(loss_sur(&beta, &d, &m).unwrap().value, sur, max_relative = 1e-14);
            assert_relative_eq!(loss_value(LossKind::Likelihood, &beta, &d, &m).unwrap(), lik, max_relative = 1e-14);
        }
    }

    #[test]
    fn losses_coincide_at_zero_noise() {
        let m = NoiseModel::noiseless();
        let (data, beta) = random_data(60, 4, 7, &m);
        let lik = loss_lik(&beta, &data, &m).unwrap();
        let sur = loss_sur(&beta, &data, &m).unwrap();
        assert_abs_diff_eq!(lik.value, sur.value, epsilon = 1e-12);
        for j in 0..4 {
            assert_abs_diff_eq!(lik.gradient[j], sur.gradient[j], epsilon = 1e-12);
        }
        let ht_l = lik.hessian_terms.unwrap();
        let ht_s = sur.hessian_terms.unwrap();
        for i in 0..data.n() {
            assert_abs_diff_eq!(ht_l.rho_i[i], ht_s.rho_i[i], epsilon = 1e-12);
            assert_abs_diff_eq!(ht_l.rho_r[i], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        for m in [nm(0.1, 0.05), nm(0.0, 0.2), nm(0.25, 0.15)] {
            let (data, beta) = random_data(40, 3, 11, &m);
            for kind in [LossKind::Likelihood, LossKind::Surrogate] {
                let eval = loss_eval(kind, &beta, &data, &m, false).unwrap();
                let s = 1e-5;
                for j in 0..3 {
                    let mut bp = beta.clone();
                    let mut bm = beta.clone();
                    bp[j] += s;
                    bm[j] -= s;
                    let fd = (loss_value(kind, &bp, &data, &m).unwrap()
                        - loss_value(kind, &bm, &data, &m).unwrap())
                        / (2.0 * s);
                    assert_relative_eq!(eval.gradient[j], fd, max_relative = 1e-6, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn curvature_weights_match_directional_second_differences() {
        let m = nm(0.15, 0.1);
        let (data, beta) = random_data(30, 3, 13, &m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        for kind in [LossKind::Likelihood, LossKind::Surrogate] {
            let ht = loss_eval(kind, &beta, &data, &m, true).unwrap().hessian_terms.unwrap();
            let xv = data.x() * &v;
            let mut quad = 0.0;
            for i in 0..data.n() {
                quad += (ht.rho_i[i] + ht.rho_r[i]) * xv[i] * xv[i];
            }
            quad /= data.n() as f64;
            let s = 1e-4;
            let f = |scale: f64| {
                let b = &beta + &v * scale;
                loss_value(kind, &b, &data, &m).unwrap()
            };
            let fd = (f(s) - 2.0 * f(0.0) + f(-s)) / (s * s);
            assert_relative_eq!(quad, fd, max_relative = 1e-4, epsilon = 1e-7);
        }
    }

    #[test]
    fn curvature_weight_bounds() {
        for m in [nm(0.1, 0.05), nm(0.0, 0.2), nm(0.3, 0.3)] {
            let (data, beta) = random_data(80, 4, 17, &m);
            for kind in [LossKind::Likelihood, LossKind::Surrogate] {
                let ht = loss_eval(kind, &beta, &data, &m, true).unwrap().hessian_terms.unwrap();
                for i in 0..data.n() {
                    assert!(ht.rho_i[i] >= 0.0);
                    assert!(ht.rho_i[i] <= 0.25 + 1e-12);
                    assert!(ht.rho_r[i].abs() <= 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn likelihood_gradient_bounded_by_max_abs_entry() {
        let m = nm(0.2, 0.1);
        let (data, _) = random_data(50, 4, 19, &m);
        let x_max = data.x().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for scale in [0.0, 0.5, 2.0, 10.0] {
            let beta = DVector::from_fn(4, |j, _| scale * (j as f64 - 1.5));
            let g = loss_lik(&beta, &data, &m).unwrap().gradient;
            assert!(g.amax() <= x_max + 1e-12);
        }
    }

    #[test]
    fn unbiasedness_gap_vanishes_under_exact_enumeration() {
        // one observation; replicate draws in exact channel proportions so
        // the empirical average equals the conditional expectation
        let m = nm(0.25, 0.0);
        let x = DMatrix::from_row_slice(1, 1, &[1.2]);
        let y = DVector::from_vec(vec![0.0]);
        let data = Dataset::new(x, DVector::from_vec(vec![0.0]))
            .unwrap()
            .with_clean_labels(y)
            .unwrap();
        let beta = DVector::from_vec(vec![0.8]);
        // P(z=1 | y=0) = 1/4: one flipped draw in four
        let draws = vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.0]),
        ];
        let gap = unbiasedness_check(&beta, &data, &m, &draws).unwrap();
        assert_abs_diff_eq!(gap, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn unbiasedness_gap_zero_without_noise_and_errors_without_clean_labels() {
        let m = NoiseModel::noiseless();
        let (data, beta) = random_data(20, 2, 23, &m);
        assert!(matches!(
            unbiasedness_check(&beta, &data, &m, &[data.z().clone()]),
            Err(Error::MissingCleanLabels)
        ));
        let with_y = data.clone().with_clean_labels(data.z().clone()).unwrap();
        let gap = unbiasedness_check(&beta, &with_y, &m, &[data.z().clone()]).unwrap();
        assert_eq!(gap, 0.0);
        assert!(unbiasedness_check(&beta, &with_y, &m, &[]).is_err());
    }

    #[test]
    fn unbiasedness_gap_shrinks_with_monte_carlo_draws() {
        let m = nm(0.15, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 25;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| if i % 3 == 0 { 1.0 } else { 0.0 });
        let data = Dataset::new(x, y.clone()).unwrap().with_clean_labels(y.clone()).unwrap();
        let beta = DVector::from_vec(vec![0.4, -0.7]);

        let mut draw = |reps: usize| {
            let mut out = Vec::with_capacity(reps);
            for _ in 0..reps {
                out.push(DVector::from_fn(n, |i, _| {
                    let flip_p = if y[i] == 1.0 { m.rho1() } else { m.rho0() };
                    let flipped = rng.random::<f64>() < flip_p;
                    if flipped {
                        1.0 - y[i]
                    } else {
                        y[i]
                    }
                }));
            }
            out
        };
        let gap = unbiasedness_check(&beta, &data, &m, &draw(4000)).unwrap();
        // loose Monte-Carlo band: per-draw sd of the surrogate loss is O(1)
        assert!(gap < 0.05, "gap {gap} too large for 4000 draws");
    }
}
