//! Efficiency comparison and de-biased inference for the two estimation
//! routes.
//!
//! The likelihood and surrogate estimators have asymptotic covariances given
//! by the inverses of two information matrices built from the same design:
//! a weighted Gram matrix for the likelihood route and a sandwich form for
//! the surrogate route. The likelihood matrix dominates in the positive
//! semidefinite order, and the size of the efficiency loss is controlled by
//! the principal angle between two weighted column spaces; both quantities
//! are computed here along with the multiplicative bound linking them.
//!
//! For penalized fits, coordinate-wise confidence intervals come from a
//! one-step correction `beta - Theta * psi_n(beta)` where `psi_n` is the
//! estimating-equation average and `Theta` approximates the inverse of its
//! Jacobian, either exactly (low dimension) or by node-wise lasso
//! regressions (high dimension).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glm::{self, NoiseModel};
use crate::loss::{Dataset, LossKind};

/// Estimating-equation family tied to one loss. Carries the noise model so
/// the scalar maps are self-contained.
#[derive(Clone, Copy, Debug)]
pub struct PsiSpec {
    pub kind: LossKind,
    pub nm: NoiseModel,
}

impl PsiSpec {
    pub fn new(kind: LossKind, nm: NoiseModel) -> Self {
        Self { kind, nm }
    }

    /// Per-observation score at predictor `t` and label `z`; averaging
    /// `psi * x` over observations gives the loss gradient.
    pub fn psi(&self, t: f64, z: f64) -> f64 {
        match self.kind {
            LossKind::Likelihood => {
                let d = glm::h_ln(t, &self.nm);
                (glm::mean_y(d.h) - z) * d.h1
            }
            LossKind::Surrogate => glm::mean_y(t) - glm::surrogate_target(z, &self.nm),
        }
    }

    /// Label-free part of the score derivative, always nonnegative.
    pub fn dpsi_i(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::Likelihood => {
                let d = glm::h_ln(t, &self.nm);
                let mz = glm::mean_y(d.h);
                mz * glm::mean_y(-d.h) * d.h1 * d.h1
            }
            LossKind::Surrogate => glm::mean_y(t) * glm::mean_y(-t),
        }
    }

    /// Label-dependent remainder of the score derivative; identically zero
    /// for the surrogate family.
    pub fn dpsi_r(&self, t: f64, z: f64) -> f64 {
        match self.kind {
            LossKind::Likelihood => {
                let d = glm::h_ln(t, &self.nm);
                (glm::mean_y(d.h) - z) * d.h2
            }
            LossKind::Surrogate => 0.0,
        }
    }
}

/// The two information matrices at a common parameter value, their
/// inverses, the induced asymptotic mean squared errors, and the two
/// alignment diagnostics comparing them.
#[derive(Clone, Debug)]
pub struct InfoPair {
    pub i_lik: DMatrix<f64>,
    pub i_sur: DMatrix<f64>,
    pub inv_lik: DMatrix<f64>,
    pub inv_sur: DMatrix<f64>,
    /// trace(inverse) / n for each route.
    pub amse_lik: f64,
    pub amse_sur: f64,
    /// Operator norm of `I - L^{-1/2} S L^{-1/2}`, in [0, 1] up to float
    /// slack; zero means the routes are equally efficient.
    pub rel_l2_diff: f64,
    /// Largest principal-angle sine between the plain and variance-ratio
    /// weighted column spaces of the design.
    pub gap: f64,
}

/// Per-column quality diagnostics for a `Theta` row: the residual variance
/// proxy `tau_sq` (reciprocal of the diagonal entry), the max-norm residual
/// of `e_j - Gram * Theta_j`, and the row ell_1 norm.
#[derive(Clone, Copy, Debug)]
pub struct ThetaDiag {
    pub tau_sq: f64,
    pub kkt_residual: f64,
    pub theta_l1: f64,
}

/// One-step corrected estimate with coordinate-wise uncertainty.
#[derive(Clone, Debug)]
pub struct DebiasReport {
    pub beta_db: DVector<f64>,
    pub se: DVector<f64>,
    pub ci_low: DVector<f64>,
    pub ci_high: DVector<f64>,
    pub theta_diag: Vec<ThetaDiag>,
}

/// Weighted Gram matrix `X' diag(w) X / n` accumulated in fixed order.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), n)));
    }
    let mut xw = x.clone();
    for i in 0..n {
        let wi = w[i];
        for j in 0..x.ncols() {
            xw[(i, j)] *= wi;
        }
    }
    Ok(x.tr_mul(&xw) / n as f64)
}

/// Columns that are numerically linear combinations of earlier columns,
/// found by sequential orthogonalization. Used to name offenders in rank
/// errors.
pub fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let n = x.nrows();
    let p = x.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..p {
        let col = DVector::from_column_slice(x.column(j).as_slice());
        let scale = col.norm();
        let mut resid = col;
        for q in &basis {
            let c = q.dot(&resid);
            resid.axpy(-c, q, 1.0);
        }
        // re-orthogonalize once for stability
        for q in &basis {
            let c = q.dot(&resid);
            resid.axpy(-c, q, 1.0);
        }
        let tol = (n.max(p) as f64) * f64::EPSILON * scale.max(1e-300) * 32.0;
        if resid.norm() <= tol {
            dependent.push(j);
        } else {
            let r = resid.norm();
            basis.push(resid / r);
        }
    }
    dependent
}

fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < m.ncols() {
        return Err(Error::RankDeficient { columns: dependent_columns(m) });
    }
    Ok(svd.u.ok_or(Error::SingularMatrix("svd basis"))?)
}

/// Operator norm of the difference between the orthogonal projectors onto
/// the column spaces of `a` and `b`. Both matrices must have full column
/// rank. With equal column counts this is the sine of the largest principal
/// angle, computed from the singular values of the basis cross product;
/// subspaces of different dimensions are at the maximal distance 1.
pub fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    if qa.ncols() != qb.ncols() {
        return Ok(1.0);
    }
    let cross = qa.tr_mul(&qb);
    let svd = cross.svd(false, false);
    let smin = svd.singular_values.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    let c = smin.clamp(0.0, 1.0);
    Ok((1.0 - c * c).sqrt())
}

fn sym_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or(Error::SingularMatrix(what))
}

fn operator_norm_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

fn inv_sqrt_sym(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let emax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    if emax <= 0.0 {
        return Err(Error::SingularMatrix(what));
    }
    let mut d = DVector::zeros(eig.eigenvalues.len());
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v <= emax * 1e-14 {
            return Err(Error::SingularMatrix(what));
        }
        d[i] = 1.0 / v.sqrt();
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for j in 0..scaled.ncols() {
        let mut col = scaled.column_mut(j);
        col *= d[j];
    }
    Ok(&scaled * q.transpose())
}

/// Information matrices of the two routes at `beta`, with the alignment
/// diagnostics. The design must have full column rank and the weighted
/// Gram matrices must be invertible.
pub fn info_matrices(x: &DMatrix<f64>, beta: &DVector<f64>, nm: &NoiseModel) -> Result<InfoPair> {
    let n = x.nrows();
    let p = x.ncols();
    if beta.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {} but the design has {p} columns",
            beta.len()
        )));
    }
    let t = x * beta;
    let a = nm.a();

    let mut w_lik = DVector::zeros(n);
    let mut w_y = DVector::zeros(n);
    let mut w_z = DVector::zeros(n);
    let mut ratio = DVector::zeros(n);
    for i in 0..n {
        let mu = glm::mean_y(t[i]);
        let vy = mu * glm::mean_y(-t[i]);
        let mz = glm::mean_z(t[i], nm);
        let vz = mz * (1.0 - mz);
        w_y[i] = vy;
        w_z[i] = vz;
        w_lik[i] = a * a * vy * vy / vz;
        ratio[i] = vy / vz;
    }

    let i_lik = weighted_gram(x, &w_lik)?;
    let gram_y = weighted_gram(x, &w_y)?;
    let gram_z = weighted_gram(x, &w_z)?;
    let inv_z = sym_inverse(&gram_z, "observed-label weighted Gram")?;
    let i_sur = (&gram_y * &inv_z * &gram_y) * (a * a);

    let inv_lik = sym_inverse(&i_lik, "likelihood information")?;
    let inv_sur = sym_inverse(&i_sur, "surrogate information")?;
    let amse_lik = inv_lik.trace() / n as f64;
    let amse_sur = inv_sur.trace() / n as f64;

    let l_inv_half = inv_sqrt_sym(&i_lik, "likelihood information")?;
    let middle = &l_inv_half * &i_sur * &l_inv_half;
    let rel_l2_diff = operator_norm_sym(&(DMatrix::identity(p, p) - middle));

    let mut wx = x.clone();
    for i in 0..n {
        let r = ratio[i];
        for j in 0..p {
            wx[(i, j)] *= r;
        }
    }
    let gap = subspace_gap(&wx, x)?;

    Ok(InfoPair { i_lik, i_sur, inv_lik, inv_sur, amse_lik, amse_sur, rel_l2_diff, gap })
}

/// Evaluates both sides of the multiplicative efficiency bound at `beta`:
/// the relative operator-norm difference of the information matrices on the
/// left, and the condition-number factor times the squared subspace gap on
/// the right. The left side never exceeds the right beyond float slack.
pub fn cor1_bound_check(x: &DMatrix<f64>, beta: &DVector<f64>, nm: &NoiseModel) -> Result<(f64, f64)> {
    let n = x.nrows();
    let info = info_matrices(x, beta, nm)?;
    let t = x * beta;

    let gram = x.tr_mul(x) / n as f64;
    let eig = gram.symmetric_eigen();
    let emax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let emin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if emin <= 0.0 {
        return Err(Error::RankDeficient { columns: dependent_columns(x) });
    }

    let mut wy_min = f64::INFINITY;
    let mut wy_max = 0.0f64;
    let mut wz_min = f64::INFINITY;
    let mut wz_max = 0.0f64;
    for i in 0..n {
        let mu = glm::mean_y(t[i]);
        let vy = mu * glm::mean_y(-t[i]);
        let mz = glm::mean_z(t[i], nm);
        let vz = mz * (1.0 - mz);
        wy_min = wy_min.min(vy);
        wy_max = wy_max.max(vy);
        wz_min = wz_min.min(vz);
        wz_max = wz_max.max(vz);
    }
    let cond_gram = emax / emin;
    let cond_wy_sq = (wy_max / wy_min).powi(2);
    let cond_wz_sq = (wz_max / wz_min).powi(2);
    let c_n = cond_gram * cond_wy_sq * cond_wz_sq;

    Ok((info.rel_l2_diff, c_n * info.gap * info.gap))
}

/// Label-free Jacobian estimate `(1/n) sum dpsi_i(t_i) x_i x_i'` of the
/// estimating equation at `beta`.
pub fn psi_gram(x: &DMatrix<f64>, beta: &DVector<f64>, psi: &PsiSpec) -> Result<DMatrix<f64>> {
    let t = x * beta;
    let w = DVector::from_fn(x.nrows(), |i, _| psi.dpsi_i(t[i]));
    weighted_gram(x, &w)
}

/// Exact inverse of [`psi_gram`], the low-dimensional `Theta` choice.
pub fn exact_theta(x: &DMatrix<f64>, beta: &DVector<f64>, psi: &PsiSpec) -> Result<DMatrix<f64>> {
    sym_inverse(&psi_gram(x, beta, psi)?, "estimating-equation Jacobian")
}

/// Shared default penalty for the node-wise regressions:
/// `0.5 * sqrt(log p / n)` times the mean weighted column scale.
pub fn default_nodewise_lambda(x: &DMatrix<f64>, beta: &DVector<f64>, psi: &PsiSpec) -> Result<f64> {
    let gram = psi_gram(x, beta, psi)?;
    let p = x.ncols();
    let mut scale = 0.0;
    for j in 0..p {
        scale += gram[(j, j)].max(0.0).sqrt();
    }
    scale /= p as f64;
    Ok(0.5 * ((p as f64).ln() / x.nrows() as f64).sqrt() * scale)
}

/// Coordinate-descent lasso on a Gram system: minimizes
/// `0.5 g' S g - s_j' g + lambda ||g||_1` over vectors supported off
/// coordinate `j`. Returns the solution embedded in a full-length vector
/// with a zero in slot `j`.
fn lasso_gram(s: &DMatrix<f64>, j: usize, lambda: f64, tol: f64) -> DVector<f64> {
    let p = s.nrows();
    let mut gamma: DVector<f64> = DVector::zeros(p);
    let mut q: DVector<f64> = DVector::zeros(p);

    let sweep = |gamma: &mut DVector<f64>, q: &mut DVector<f64>, active_only: bool| -> f64 {
        let mut max_delta = 0.0f64;
        for k in 0..p {
            if k == j || (active_only && gamma[k] == 0.0) {
                continue;
            }
            let skk = s[(k, k)];
            let partial = s[(k, j)] - (q[k] - skk * gamma[k]);
            let new = {
                let soft = if partial > lambda {
                    partial - lambda
                } else if partial < -lambda {
                    partial + lambda
                } else {
                    0.0
                };
                soft / skk
            };
            let delta = new - gamma[k];
            if delta != 0.0 {
                q.axpy(delta, &s.column(k), 1.0);
                gamma[k] = new;
                max_delta = max_delta.max(delta.abs() * skk.sqrt());
            }
        }
        max_delta
    };

    let max_rounds = 2_000;
    for _ in 0..max_rounds {
        let full_delta = sweep(&mut gamma, &mut q, false);
        if full_delta <= tol {
            break;
        }
        for _ in 0..max_rounds {
            if sweep(&mut gamma, &mut q, true) <= tol {
                break;
            }
        }
    }
    gamma
}

/// Approximate inverse of the estimating-equation Jacobian by node-wise
/// lasso: each row solves a penalized weighted regression of one design
/// column on the others. `lambdas` holds one penalty per column. Returns
/// the row-wise matrix together with per-column diagnostics.
pub fn nodewise_theta(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    psi: &PsiSpec,
    lambdas: &[f64],
) -> Result<(DMatrix<f64>, Vec<ThetaDiag>)> {
    let p = x.ncols();
    if lambdas.len() != p {
        return Err(Error::DimensionMismatch(format!("{} penalties for {p} columns", lambdas.len())));
    }
    if lambdas.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
        return Err(Error::InvalidConfig("node-wise penalties must be finite and >= 0".into()));
    }
    let s = psi_gram(x, beta, psi)?;
    for k in 0..p {
        if !(s[(k, k)] > 0.0) {
            return Err(Error::DegenerateColumn { col: k });
        }
    }
    let scale = (0..p).map(|k| s[(k, k)].sqrt()).sum::<f64>() / p as f64;
    let tol = 1e-10 * scale.max(1e-12);

    let mut theta = DMatrix::zeros(p, p);
    let mut diags = Vec::with_capacity(p);
    for j in 0..p {
        let gamma = lasso_gram(&s, j, lambdas[j], tol);
        // residual form of the variance proxy, plus the penalty term
        let sg = &s * &gamma;
        let quad = gamma.dot(&sg);
        let cross = gamma.dot(&DVector::from_column_slice(s.column(j).as_slice()));
        let l1 = gamma.iter().map(|g| g.abs()).sum::<f64>();
        let tau_sq = s[(j, j)] - 2.0 * cross + quad + lambdas[j] * l1;
        if !(tau_sq > 0.0) {
            return Err(Error::DegenerateColumn { col: j });
        }
        for k in 0..p {
            theta[(j, k)] = if k == j { 1.0 } else { -gamma[k] } / tau_sq;
        }
        let theta_row = DVector::from_fn(p, |k, _| theta[(j, k)]);
        let mut resid = &s * &theta_row;
        resid[j] -= 1.0;
        let kkt = resid.amax();
        let theta_l1 = theta_row.iter().map(|v| v.abs()).sum::<f64>();
        diags.push(ThetaDiag { tau_sq, kkt_residual: kkt, theta_l1 });
    }
    Ok((theta, diags))
}

/// Quantile of the standard normal distribution. Rational approximations
/// with absolute error far below 1e-9 over the open unit interval.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile level {p} must lie in (0, 1)")));
    }
    let q = p - 0.5;
    let value = if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987_1e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        num / den
    } else {
        let tail = if q < 0.0 { p } else { 1.0 - p };
        let mut r = (-tail.ln()).sqrt();
        let v = if r <= 5.0 {
            r -= 1.6;
            let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
                + 2.417_807_251_774_506_1e-1)
                * r
                + 1.270_458_252_452_368_4)
                * r
                + 3.647_848_324_763_204_5)
                * r
                + 5.769_497_221_460_691)
                * r
                + 4.630_337_846_156_545)
                * r
                + 1.423_437_110_749_683_5;
            let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0;
            num / den
        } else {
            r -= 5.0;
            let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
                + 1.242_660_947_388_078_4e-3)
                * r
                + 2.653_218_952_657_612_3e-2)
                * r
                + 2.965_605_718_285_048_9e-1)
                * r
                + 1.784_826_539_917_291_3)
                * r
                + 5.463_784_911_164_114)
                * r
                + 6.657_904_643_501_103;
            let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0;
            num / den
        };
        if q < 0.0 {
            -v
        } else {
            v
        }
    };
    Ok(value)
}

/// One-step corrected estimate, plug-in standard errors from the sandwich
/// `Theta' [(1/n) sum psi^2 x x'] Theta / n`, and symmetric normal-quantile
/// confidence intervals at level `1 - alpha`.
pub fn debias(
    data: &Dataset,
    beta_hat: &DVector<f64>,
    psi: &PsiSpec,
    theta: &DMatrix<f64>,
    alpha: f64,
) -> Result<DebiasReport> {
    let p = data.p();
    let n = data.n();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if theta.nrows() != p || theta.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "theta is {}x{} but the design has {p} columns",
            theta.nrows(),
            theta.ncols()
        )));
    }
    let t = data.linear_predictor(beta_hat)?;

    let mut scores = DVector::zeros(n);
    for i in 0..n {
        scores[i] = psi.psi(t[i], data.z()[i]);
    }
    let psi_n = data.x().tr_mul(&scores) / n as f64;
    let beta_db = beta_hat - theta * &psi_n;

    let score_sq = DVector::from_fn(n, |i, _| scores[i] * scores[i]);
    let s_outer = weighted_gram(data.x(), &score_sq)?;
    let jac = psi_gram(data.x(), beta_hat, psi)?;

    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let mut se = DVector::zeros(p);
    let mut ci_low = DVector::zeros(p);
    let mut ci_high = DVector::zeros(p);
    let mut theta_diag = Vec::with_capacity(p);
    for j in 0..p {
        let row = DVector::from_fn(p, |k, _| theta[(j, k)]);
        let var = row.dot(&(&s_outer * &row));
        if var < 0.0 || !var.is_finite() {
            return Err(Error::NonFinite { what: "sandwich variance", iter: j });
        }
        se[j] = (var / n as f64).sqrt();
        ci_low[j] = beta_db[j] - z * se[j];
        ci_high[j] = beta_db[j] + z * se[j];

        let mut resid = &jac * &row;
        resid[j] -= 1.0;
        let tau_sq = if theta[(j, j)] > 0.0 { 1.0 / theta[(j, j)] } else { f64::NAN };
        theta_diag.push(ThetaDiag {
            tau_sq,
            kkt_residual: resid.amax(),
            theta_l1: row.iter().map(|v| v.abs()).sum(),
        });
    }

    Ok(DebiasReport { beta_db, se, ci_low, ci_high, theta_diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{loss_eval, LossKind};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    // Frozen 50-digit normal quantiles.
    const Z_975: f64 = 1.959_963_984_540_054_2;
    const Z_995: f64 = 2.575_829_303_548_900_8;
    const Z_900: f64 = 1.281_551_565_544_600_5;
    const Z_750: f64 = 0.674_489_750_196_081_7;
    const Z_1EM9: f64 = -5.997_807_015_007_687;

    fn nm(r0: f64, r1: f64) -> NoiseModel {
        NoiseModel::new(r0, r1).unwrap()
    }

    fn random_x(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn normal_quantile_frozen_values() {
        assert_abs_diff_eq!(normal_quantile(0.975).unwrap(), Z_975, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.995).unwrap(), Z_995, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.9).unwrap(), Z_900, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.75).unwrap(), Z_750, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(1e-9).unwrap(), Z_1EM9, epsilon = 1e-8);
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        for p in [0.001, 0.2, 0.4, 0.77, 0.999] {
            let z = normal_quantile(p).unwrap();
            let zm = normal_quantile(1.0 - p).unwrap();
            assert_abs_diff_eq!(z, -zm, epsilon = 1e-12);
        }
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(-0.2).is_err());
    }

    #[test]
    fn psi_matches_loss_gradient() {
        let m = nm(0.1, 0.05);
        let x = random_x(40, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = DVector::from_fn(40, |_, _| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
        let data = Dataset::new(x.clone(), z.clone()).unwrap();
        let beta = DVector::from_vec(vec![0.3, -0.5, 0.8]);
        for kind in [LossKind::Likelihood, LossKind::Surrogate] {
            let psi = PsiSpec::new(kind, m);
            let t = &x * &beta;
            let scores = DVector::from_fn(40, |i, _| psi.psi(t[i], z[i]));
            let manual = x.tr_mul(&scores) / 40.0;
            let grad = loss_eval(kind, &beta, &data, &m, false).unwrap().gradient;
            for j in 0..3 {
                assert_abs_diff_eq!(manual[j], grad[j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let m = nm(0.15, 0.1);
        for kind in [LossKind::Likelihood, LossKind::Surrogate] {
            let psi = PsiSpec::new(kind, m);
            for i in -10..=10 {
                let t = i as f64 / 2.5;
                for z in [0.0, 1.0] {
                    let s = 1e-5;
                    let fd = (psi.psi(t + s, z) - psi.psi(t - s, z)) / (2.0 * s);
                    let total = psi.dpsi_i(t) + psi.dpsi_r(t, z);
                    assert_relative_eq!(total, fd, max_relative = 1e-6, epsilon = 1e-9);
                }
                assert!(psi.dpsi_i(t) >= 0.0);
            }
        }
    }

    #[test]
    fn info_matrices_coincide_at_zero_noise() {
        let m = NoiseModel::noiseless();
        let x = random_x(60, 4, 3);
        let beta = DVector::from_vec(vec![0.2, -0.4, 0.6, 0.1]);
        let info = info_matrices(&x, &beta, &m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(info.i_lik[(i, j)], info.i_sur[(i, j)], epsilon = 1e-10);
            }
        }
        assert!(info.rel_l2_diff <= 1e-8);
        assert!(info.gap <= 1e-7);
        assert_relative_eq!(info.amse_lik, info.amse_sur, max_relative = 1e-8);
    }

    #[test]
    fn intercept_only_design_has_no_efficiency_loss() {
        let m = nm(0.2, 0.1);
        let x = DMatrix::from_element(50, 1, 1.0);
        let beta = DVector::from_vec(vec![0.7]);
        let info = info_matrices(&x, &beta, &m).unwrap();
        assert!(info.gap <= 1e-10, "gap {}", info.gap);
        assert!(info.rel_l2_diff <= 1e-10, "rd {}", info.rel_l2_diff);
    }

    #[test]
    fn information_ordering_and_amse() {
        let m = nm(0.1, 0.05);
        let x = random_x(400, 5, 7);
        let beta = DVector::from_vec(vec![0.5, -0.3, 0.8, 0.0, 0.2]);
        let info = info_matrices(&x, &beta, &m).unwrap();
        let diff = &info.i_lik - &info.i_sur;
        let eig = diff.symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        assert!(min_eig >= -1e-8 * info.i_lik.trace(), "min eig {min_eig}");
        assert!(info.amse_lik <= info.amse_sur + 1e-12);
        assert!(info.rel_l2_diff >= -1e-12 && info.rel_l2_diff <= 1.0 + 1e-8);
    }

    #[test]
    fn gap_matches_dense_projector_oracle() {
        for seed in 0..8u64 {
            let n = 30;
            let a = random_x(n, 4, 100 + seed);
            let b = random_x(n, 4, 200 + seed);
            let gap = subspace_gap(&a, &b).unwrap();
            // dense oracle: build both projectors and take the top singular
            // value of their difference
            let proj = |m: &DMatrix<f64>| {
                let gram_inv = (m.tr_mul(m)).try_inverse().unwrap();
                m * gram_inv * m.transpose()
            };
            let diff = proj(&a) - proj(&b);
            let svd = diff.svd(false, false);
            let oracle = svd.singular_values.iter().fold(0.0f64, |acc, &s| acc.max(s));
            assert_abs_diff_eq!(gap, oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn gap_known_cases_and_invariances() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_abs_diff_eq!(subspace_gap(&e1, &e2).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(subspace_gap(&e1, &e1).unwrap(), 0.0, epsilon = 1e-14);

        let a = random_x(25, 3, 11);
        let b = random_x(25, 3, 12);
        let g_ab = subspace_gap(&a, &b).unwrap();
        let g_ba = subspace_gap(&b, &a).unwrap();
        assert_abs_diff_eq!(g_ab, g_ba, epsilon = 1e-12);
        assert!((0.0..=1.0 + 1e-12).contains(&g_ab));

        // same span after an invertible mix: gap zero
        let mix = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0, 3.0]);
        let am = &a * &mix;
        assert!(subspace_gap(&a, &am).unwrap() <= 1e-7);

        // different dimensions sit at maximal distance
        let a2 = a.columns(0, 2).into_owned();
        assert_eq!(subspace_gap(&a, &a2).unwrap(), 1.0);
    }

    #[test]
    fn gap_rejects_rank_deficient_input() {
        let mut a = random_x(20, 3, 13);
        let dup = DVector::from_column_slice(a.column(0).as_slice());
        a.set_column(2, &(dup * 2.0));
        match subspace_gap(&a, &random_x(20, 3, 14)) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn bound_check_holds_on_random_designs() {
        let m = nm(0.1, 0.05);
        for seed in 0..5u64 {
            let x = random_x(150, 4, 300 + seed);
            let beta = DVector::from_fn(4, |j, _| 0.4 * ((j + 1) as f64 * 0.9).cos());
            let (lhs, rhs) = cor1_bound_check(&x, &beta, &m).unwrap();
            assert!(lhs <= rhs + 1e-8, "lhs {lhs} rhs {rhs}");
            assert!(lhs >= 0.0);
        }
    }

    #[test]
    fn nodewise_with_vanishing_penalty_recovers_exact_inverse() {
        let m = nm(0.1, 0.05);
        let x = random_x(300, 5, 17);
        let beta = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.0, 0.1]);
        let psi = PsiSpec::new(LossKind::Surrogate, m);
        let exact = exact_theta(&x, &beta, &psi).unwrap();
        let (theta, diags) = nodewise_theta(&x, &beta, &psi, &[1e-10; 5]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(theta[(i, j)], exact[(i, j)], epsilon = 1e-3);
            }
        }
        for d in &diags {
            assert!(d.kkt_residual <= 1e-6);
            assert!(d.tau_sq > 0.0);
        }
    }

    #[test]
    fn nodewise_kkt_residual_bound() {
        let m = nm(0.15, 0.05);
        let x = random_x(80, 12, 19);
        let beta = DVector::from_fn(12, |j, _| if j < 3 { 0.5 } else { 0.0 });
        for kind in [LossKind::Likelihood, LossKind::Surrogate] {
            let psi = PsiSpec::new(kind, m);
            let lambda = default_nodewise_lambda(&x, &beta, &psi).unwrap();
            assert!(lambda > 0.0);
            let (theta, diags) = nodewise_theta(&x, &beta, &psi, &vec![lambda; 12]).unwrap();
            for (j, d) in diags.iter().enumerate() {
                assert!(
                    d.kkt_residual <= lambda * d.theta_l1 + 1e-8,
                    "column {j}: kkt {} vs bound {}",
                    d.kkt_residual,
                    lambda * d.theta_l1
                );
                assert_relative_eq!(theta[(j, j)], 1.0 / d.tau_sq, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn nodewise_validates_inputs() {
        let m = nm(0.1, 0.05);
        let x = random_x(30, 3, 23);
        let beta = DVector::zeros(3);
        let psi = PsiSpec::new(LossKind::Surrogate, m);
        assert!(nodewise_theta(&x, &beta, &psi, &[0.1, 0.1]).is_err());
        assert!(nodewise_theta(&x, &beta, &psi, &[0.1, -0.1, 0.1]).is_err());
        let mut xz = x.clone();
        xz.set_column(1, &DVector::zeros(30));
        match nodewise_theta(&xz, &beta, &psi, &[0.1; 3]) {
            Err(Error::DegenerateColumn { col }) => assert_eq!(col, 1),
            other => panic!("expected degenerate column, got {other:?}"),
        }
    }

    #[test]
    fn debias_is_identity_at_unpenalized_optimum() {
        let m = nm(0.1, 0.05);
        let x = random_x(500, 4, 29);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let beta0 = DVector::from_vec(vec![0.4, -0.6, 0.3, 0.0]);
        let z = DVector::from_fn(500, |i, _| {
            let t = (x.row(i) * &beta0)[(0, 0)];
            if rng.random::<f64>() < glm::mean_z(t, &m) {
                1.0
            } else {
                0.0
            }
        });
        let data = Dataset::new(x.clone(), z).unwrap();
        let mut cfg = crate::optim::FitConfig::new(LossKind::Surrogate);
        cfg.tol_gradmap = Some(1e-11);
        cfg.tol_obj = 1e-30;
        cfg.max_iter = 200_000;
        let fitted = crate::optim::fit(&data, &m, &cfg).unwrap();

        let psi = PsiSpec::new(LossKind::Surrogate, m);
        let theta = exact_theta(&x, &fitted.beta, &psi).unwrap();
        let report = debias(&data, &fitted.beta, &psi, &theta, 0.05).unwrap();
        // the one-step correction at a stationary point is zero up to
        // solver resolution, and far below the inference scale
        let correction = (&report.beta_db - &fitted.beta).norm();
        assert!(correction <= 0.01 * report.se.min(), "correction {correction}");
        for j in 0..4 {
            assert_abs_diff_eq!(report.beta_db[j], fitted.beta[j], epsilon = 1e-6);
            assert!(report.se[j] > 0.0);
            assert!(report.ci_low[j] < report.beta_db[j] && report.beta_db[j] < report.ci_high[j]);
            assert_relative_eq!(
                report.ci_high[j] - report.beta_db[j],
                report.beta_db[j] - report.ci_low[j],
                max_relative = 1e-10
            );
            assert!(report.theta_diag[j].kkt_residual <= 1e-8);
        }
    }

    #[test]
    fn debias_validates_inputs() {
        let m = nm(0.1, 0.05);
        let x = random_x(20, 2, 37);
        let data = Dataset::new(x.clone(), DVector::from_fn(20, |i, _| (i % 2) as f64)).unwrap();
        let beta = DVector::zeros(2);
        let psi = PsiSpec::new(LossKind::Surrogate, m);
        let theta = DMatrix::identity(2, 2);
        assert!(debias(&data, &beta, &psi, &theta, 0.0).is_err());
        assert!(debias(&data, &beta, &psi, &theta, 1.0).is_err());
        assert!(debias(&data, &beta, &psi, &DMatrix::identity(3, 3), 0.05).is_err());
    }
}
