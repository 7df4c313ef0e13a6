//! Proximal-gradient solvers for penalized and ball-constrained fits.
//!
//! Both losses are minimized with the same machinery: a gradient step on the
//! smooth part followed by the proximal map of the nonsmooth part, with a
//! backtracking line search on the step size. The nonsmooth part is an ell_1
//! penalty on the non-exempt coordinates plus, for the likelihood loss only,
//! an ell_2 ball constraint around the origin. For that combination the
//! proximal map is exact: soft-threshold first, then radially project onto
//! the ball.
//!
//! Every accepted step satisfies the standard sufficient-decrease test, so
//! the recorded objective trace is nonincreasing up to float slack, for the
//! nonconvex likelihood objective as well. All arithmetic is sequential with
//! a fixed accumulation order; identical inputs give bitwise-identical
//! results.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::glm::NoiseModel;
use crate::loss::{loss_eval, loss_value, Dataset, LossKind};

/// Starting point for the solver.
#[derive(Clone, Debug)]
pub enum Init {
    Zeros,
    Warm(DVector<f64>),
}

/// Why the solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Norm of the proximal gradient map fell below `tol_gradmap`.
    GradMapTol,
    /// Relative objective change fell below `tol_obj`.
    ObjTol,
    /// Iteration budget exhausted before either tolerance was met.
    MaxIter,
}

/// Solver configuration. `radius` is only meaningful for the likelihood
/// loss, whose estimator is defined over an ell_2 ball; when left unset a
/// ball wide enough to be inactive is derived from a surrogate pilot fit.
#[derive(Clone, Debug)]
pub struct FitConfig {
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub radius: Option<f64>,
    /// Coordinates exempt from the ell_1 penalty (the dataset's intercept
    /// column is added automatically).
    pub unpenalized: Vec<usize>,
    pub init: Init,
    pub max_iter: usize,
    /// Relative objective-change tolerance.
    pub tol_obj: f64,
    /// Gradient-map norm tolerance; `None` resolves to `1e-6 * sqrt(p)`.
    pub tol_gradmap: Option<f64>,
    pub backtrack_shrink: f64,
    pub step_init: f64,
}

impl FitConfig {
    pub fn new(loss_kind: LossKind) -> Self {
        Self {
            loss_kind,
            lambda: 0.0,
            radius: None,
            unpenalized: Vec::new(),
            init: Init::Zeros,
            max_iter: 10_000,
            tol_obj: 1e-10,
            tol_gradmap: None,
            backtrack_shrink: 0.5,
            step_init: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = Some(radius);
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    fn validate(&self, p: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        if let Some(r) = self.radius {
            if self.loss_kind == LossKind::Surrogate {
                return Err(Error::InvalidConfig(
                    "the ball constraint applies to the likelihood loss only".into(),
                ));
            }
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidConfig(format!("radius = {r} must be finite and > 0")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol_obj > 0.0) || !self.tol_obj.is_finite() {
            return Err(Error::InvalidConfig(format!("tol_obj = {} must be finite and > 0", self.tol_obj)));
        }
        if let Some(t) = self.tol_gradmap {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidConfig(format!("tol_gradmap = {t} must be finite and > 0")));
            }
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "backtrack_shrink = {} must lie in (0, 1)",
                self.backtrack_shrink
            )));
        }
        if !(self.step_init.is_finite() && self.step_init > 0.0) {
            return Err(Error::InvalidConfig(format!("step_init = {} must be finite and > 0", self.step_init)));
        }
        for &j in &self.unpenalized {
            if j >= p {
                return Err(Error::InvalidConfig(format!("unpenalized index {j} out of range for p = {p}")));
            }
        }
        if let Init::Warm(w) = &self.init {
            if w.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "warm start has length {} but the design has {p} columns",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("warm start contains a non-finite entry".into()));
            }
        }
        Ok(())
    }
}

/// Solver output. `objective_trace[k]` is the penalized objective after `k`
/// proximal steps (index 0 is the starting point); `active_set` lists the
/// coordinates that are exactly nonzero in `beta`.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// Penalized objective at `beta`, the best value encountered.
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub active_set: Vec<usize>,
}

/// Soft-thresholding, the proximal map of `threshold * ||.||_1`.
pub fn prox_l1(v: &DVector<f64>, threshold: f64) -> DVector<f64> {
    DVector::from_fn(v.len(), |j, _| soft(v[j], threshold))
}

fn soft(v: f64, thr: f64) -> f64 {
    if v > thr {
        v - thr
    } else if v < -thr {
        v + thr
    } else {
        0.0
    }
}

/// Euclidean projection onto the origin-centered ball of the given radius.
/// Points already inside are returned unchanged (no rescaling drift).
pub fn project_l2_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= radius {
        v.clone()
    } else {
        v * (radius / norm)
    }
}

/// Penalty mask: true for coordinates the ell_1 penalty applies to.
fn penalty_mask(p: usize, cfg: &FitConfig, data: &Dataset) -> Vec<bool> {
    let mut mask = vec![true; p];
    for &j in &cfg.unpenalized {
        mask[j] = false;
    }
    if let Some(j) = data.intercept_col() {
        mask[j] = false;
    }
    mask
}

fn penalty_value(beta: &DVector<f64>, lambda: f64, mask: &[bool]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (j, &m) in mask.iter().enumerate() {
        if m {
            acc += beta[j].abs();
        }
    }
    lambda * acc
}

/// Proximal map of the masked ell_1 penalty plus the optional ball
/// indicator: soft-threshold the penalized coordinates, then project. The
/// composition is the exact prox because projection rescales radially.
fn prox_step(v: &DVector<f64>, thr: f64, mask: &[bool], radius: Option<f64>) -> DVector<f64> {
    let mut w = DVector::from_fn(v.len(), |j, _| if mask[j] { soft(v[j], thr) } else { v[j] });
    if let Some(r) = radius {
        let norm = w.norm();
        if norm > r {
            w *= r / norm;
        }
    }
    w
}

/// Resolves the likelihood ball radius when the configuration leaves it
/// unset: `100 * max(1, ||beta_s||_2)` where `beta_s` is the surrogate fit
/// under the same penalty settings.
fn resolve_radius(data: &Dataset, nm: &NoiseModel, cfg: &FitConfig) -> Result<f64> {
    let pilot_cfg = FitConfig {
        loss_kind: LossKind::Surrogate,
        radius: None,
        init: Init::Zeros,
        ..cfg.clone()
    };
    let pilot = fit(data, nm, &pilot_cfg)?;
    Ok(100.0 * pilot.beta.norm().max(1.0))
}

/// Minimizes the configured objective by proximal gradient descent with
/// backtracking. Returns the final iterate, the objective trace, and which
/// stopping rule fired. `Err` is reserved for invalid configurations and
/// numerical breakdown; hitting `max_iter` is reported in the result.
pub fn fit(data: &Dataset, nm: &NoiseModel, cfg: &FitConfig) -> Result<FitResult> {
    let p = data.p();
    cfg.validate(p)?;

    let radius = match (cfg.loss_kind, cfg.radius) {
        (LossKind::Likelihood, None) => Some(resolve_radius(data, nm, cfg)?),
        (_, r) => r,
    };

    let mask = penalty_mask(p, cfg, data);
    let tol_gradmap = cfg.tol_gradmap.unwrap_or(1e-6 * (p as f64).sqrt());

    let mut beta = match &cfg.init {
        Init::Zeros => DVector::zeros(p),
        Init::Warm(w) => w.clone(),
    };
    if let Some(r) = radius {
        beta = project_l2_ball(&beta, r);
    }

    let eval = loss_eval(cfg.loss_kind, &beta, data, nm, false)?;
    let mut smooth = eval.value;
    let mut grad = eval.gradient;
    let mut objective = smooth + penalty_value(&beta, cfg.lambda, &mask);
    if !objective.is_finite() {
        return Err(Error::NonFinite { what: "objective", iter: 0 });
    }

    let mut trace = Vec::with_capacity(64);
    trace.push(objective);

    let mut step = cfg.step_init;
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    // stop once the relative decrease has stayed below tol_obj for this
    // many consecutive iterations; a single flat step can be a backtracking
    // transient rather than convergence
    let mut stalled = 0usize;
    const STALL_PATIENCE: usize = 5;

    'outer: for iter in 1..=cfg.max_iter {
        // let the step grow between iterations: the tests below certify
        // any trial step, and in saturated regions the local curvature can
        // be orders of magnitude below its value at the starting point, so
        // capping at step_init would crawl
        step = (step / cfg.backtrack_shrink).min(1e6);
        // backtracking on the proximal step until the local quadratic model
        // is an upper bound at the candidate; the slack tolerates
        // evaluation round-off, and the monotone gate keeps that same
        // slack from letting the iterates dither just above the optimum
        let mut gate_rejected = false;
        let (candidate, cand_objective, diff_sq) = loop {
            let target = &beta - &grad * step;
            let candidate = prox_step(&target, cfg.lambda * step, &mask, radius);
            let diff = &candidate - &beta;
            let diff_sq = diff.norm_squared();
            let cand_smooth = loss_value(cfg.loss_kind, &candidate, data, nm)?;
            let bound = smooth + grad.dot(&diff) + diff_sq / (2.0 * step)
                + 1e-12 * smooth.abs().max(1.0);
            if cand_smooth <= bound {
                let cand_objective =
                    cand_smooth + penalty_value(&candidate, cfg.lambda, &mask);
                if !cand_objective.is_finite() {
                    return Err(Error::NonFinite { what: "objective", iter });
                }
                // a zero-length move after gate rejections is step
                // underflow, not a fixed point, so it keeps shrinking
                if cand_objective <= objective && (diff_sq > 0.0 || !gate_rejected) {
                    break (candidate, cand_objective, diff_sq);
                }
                gate_rejected = true;
            }
            step *= cfg.backtrack_shrink;
            if step < 1e-20 {
                if gate_rejected {
                    // no step of any size improves the objective: the
                    // iterate is the minimizer at float resolution
                    termination = Termination::ObjTol;
                    break 'outer;
                }
                return Err(Error::NonFinite { what: "step size", iter });
            }
        };

        let gradmap_norm = diff_sq.sqrt() / step;
        let improvement = objective - cand_objective;

        beta = candidate;
        objective = cand_objective;
        trace.push(objective);
        iterations = iter;

        if improvement <= cfg.tol_obj * objective.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }

        if gradmap_norm <= tol_gradmap {
            termination = Termination::GradMapTol;
            break;
        }
        if stalled >= STALL_PATIENCE {
            termination = Termination::ObjTol;
            break;
        }
        if iter == cfg.max_iter {
            break;
        }

        let eval = loss_eval(cfg.loss_kind, &beta, data, nm, false)?;
        smooth = eval.value;
        grad = eval.gradient;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", iter });
        }
    }

    let active_set = (0..p).filter(|&j| beta[j] != 0.0).collect();
    Ok(FitResult { beta, objective, objective_trace: trace, iterations, termination, active_set })
}

/// Smallest penalty level at which every penalized coordinate of the
/// minimizer is exactly zero: the max-norm of the loss gradient over the
/// penalized coordinates, evaluated at the restricted optimum where only
/// unpenalized coordinates (intercept included) are free.
pub fn lambda_max(data: &Dataset, nm: &NoiseModel, cfg: &FitConfig) -> Result<f64> {
    let p = data.p();
    cfg.validate(p)?;
    let mask = penalty_mask(p, cfg, data);

    let mut beta = DVector::zeros(p);
    let free: Vec<usize> = (0..p).filter(|&j| !mask[j]).collect();
    if !free.is_empty() {
        // restricted fit on the unpenalized columns only
        let sub_x = data.x().select_columns(free.iter());
        let mut sub = Dataset::new(sub_x, data.z().clone())?;
        if let Some(ic) = data.intercept_col() {
            if let Some(pos) = free.iter().position(|&j| j == ic) {
                sub = sub.with_intercept_col(pos)?;
            }
        }
        let sub_cfg = FitConfig {
            lambda: 0.0,
            radius: None,
            unpenalized: (0..free.len()).collect(),
            init: Init::Zeros,
            ..cfg.clone()
        };
        let sub_fit = fit(&sub, nm, &sub_cfg)?;
        for (pos, &j) in free.iter().enumerate() {
            beta[j] = sub_fit.beta[pos];
        }
    }

    let grad = loss_eval(cfg.loss_kind, &beta, data, nm, false)?.gradient;
    let lmax = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(j, _)| grad[j].abs())
        .fold(0.0f64, f64::max);
    Ok(lmax)
}

/// Fifty log-spaced penalty levels from `lmax` down to `1e-3 * lmax`.
pub fn default_lambda_grid(lmax: f64) -> Result<Vec<f64>> {
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda_max = {lmax} must be finite and > 0")));
    }
    let k = 50;
    let lo = lmax * 1e-3;
    let ratio = (lo / lmax).ln();
    Ok((0..k).map(|i| lmax * (ratio * i as f64 / (k - 1) as f64).exp()).collect())
}

/// K-fold cross validation over a descending penalty grid, warm-starting
/// each path. Returns the selected penalty and the mean held-out loss per
/// grid point. Ties pick the smallest penalty among the minimizers. Folds
/// are assigned round-robin by row index; a fold containing a single label
/// class is allowed since both losses remain well defined.
pub fn cv_select_lambda(
    data: &Dataset,
    nm: &NoiseModel,
    cfg: &FitConfig,
    folds: usize,
    grid: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = data.n();
    cfg.validate(data.p())?;
    if folds < 2 || folds > n {
        return Err(Error::InvalidConfig(format!("folds = {folds} must lie in [2, n = {n}]")));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("penalty grid is empty".into()));
    }
    for w in grid.windows(2) {
        if !(w[0] > w[1]) {
            return Err(Error::InvalidConfig("penalty grid must be strictly descending".into()));
        }
    }
    if grid.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::InvalidConfig("penalty grid entries must be finite and > 0".into()));
    }

    // resolve the likelihood ball once, on the full data, so each path fit
    // does not rerun the pilot
    let radius = match (cfg.loss_kind, cfg.radius) {
        (LossKind::Likelihood, None) => {
            let pilot_cfg = FitConfig { lambda: grid[0], ..cfg.clone() };
            Some(resolve_radius(data, nm, &pilot_cfg)?)
        }
        (_, r) => r,
    };

    let mut heldout_sum = vec![0.0; grid.len()];
    for fold in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let test_rows: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();

        let slice_rows = |rows: &[usize]| -> Result<Dataset> {
            let x = data.x().select_rows(rows.iter());
            let z = DVector::from_fn(rows.len(), |k, _| data.z()[rows[k]]);
            let mut d = Dataset::new(x, z)?;
            if let Some(ic) = data.intercept_col() {
                d = d.with_intercept_col(ic)?;
            }
            Ok(d)
        };
        let train = slice_rows(&train_rows)?;
        let test = slice_rows(&test_rows)?;

        let mut warm: Option<DVector<f64>> = None;
        for (k, &lambda) in grid.iter().enumerate() {
            let path_cfg = FitConfig {
                lambda,
                radius,
                init: warm.take().map_or(Init::Zeros, Init::Warm),
                ..cfg.clone()
            };
            let fitted = fit(&train, nm, &path_cfg)?;
            heldout_sum[k] += loss_value(cfg.loss_kind, &fitted.beta, &test, nm)?;
            warm = Some(fitted.beta);
        }
    }

    let curve: Vec<f64> = heldout_sum.iter().map(|s| s / folds as f64).collect();
    Ok((grid[select_min_prefer_smaller(&curve)], curve))
}

/// Index of the curve minimum; exact ties resolve to the latest index,
/// which on a descending grid is the smallest penalty (densest model).
fn select_min_prefer_smaller(curve: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..curve.len() {
        if curve[k] <= curve[best] {
            best = k;
        }
    }
    best
}
