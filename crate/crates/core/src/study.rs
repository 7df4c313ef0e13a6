//! Config-driven Monte-Carlo studies comparing the two estimation routes:
//! efficiency against the subspace gap on mixture designs, against the
//! noise rates, estimation error across sample sizes in low and high
//! dimension, penalized performance across sparsity levels, and confidence
//! interval coverage.
//!
//! Replications run in parallel on a dedicated thread pool, but each draws
//! from its own seed stream derived from the master seed, and aggregation
//! walks replications in index order. The emitted table is therefore
//! byte-identical for any worker count.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::NoiseModel;
use crate::inference::{
    debias, default_nodewise_lambda, exact_theta, info_matrices, nodewise_theta, normal_quantile,
    PsiSpec,
};
use crate::loss::{loss_value, Dataset, LossKind};
use crate::optim::{cv_select_lambda, default_lambda_grid, fit, lambda_max, FitConfig, Init, Termination};
use crate::simgen::{derive_seed, flip_labels, gen_design, gen_labels, scale_covariance_for_signal, Ar1Cov, Design};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Mixture designs with growing component separation; tracks how the
    /// efficiency ratios degrade with the squared subspace gap.
    EfficiencyVsGap,
    /// Fixed design, a grid of noise-rate pairs.
    NoiseRates,
    /// Estimation error across sample sizes, either fixed `p` and
    /// unpenalized fits or `p = n` with penalized fits.
    EstimationError,
    /// Penalized and unpenalized error ratios across sparsity levels of the
    /// true signal.
    SparsityRatio,
    /// Empirical confidence-interval coverage for the plain and de-biased
    /// estimators of both routes.
    Coverage,
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StudyKind::EfficiencyVsGap => "efficiency_vs_gap",
            StudyKind::NoiseRates => "noise_rates",
            StudyKind::EstimationError => "estimation_error",
            StudyKind::SparsityRatio => "sparsity_ratio",
            StudyKind::Coverage => "coverage",
        };
        f.write_str(name)
    }
}

/// How penalized fits choose their penalty.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    /// One fixed value for every replication.
    Fixed { value: f64 },
    /// `factor * (mean column sd) * sqrt(log p / n)`, computed per
    /// replication from its design.
    Scaled { factor: f64 },
    /// K-fold cross validation over the default grid.
    Cv { folds: usize },
    /// Fresh test sample of the training size; smallest penalty minimizing
    /// the test loss over the default grid.
    TestSet,
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Scaled { factor: 0.5 }
    }
}

/// Optional solver settings applied on top of the defaults for every fit
/// inside a study.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOverrides {
    pub max_iter: Option<usize>,
    pub tol_gradmap: Option<f64>,
    pub tol_obj: Option<f64>,
}

/// Flat study configuration; unset fields take the defaults below, and
/// each study kind validates only the fields it reads. Grids: the
/// efficiency study walks `d_sq_grid` (squared per-coordinate center
/// offset), the noise study walks `noise_grid` pairs, the estimation study
/// walks `n_grid`, and the sparsity study walks `s_grid`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub study: StudyKind,
    pub n: usize,
    pub p: usize,
    /// Number of leading nonzero coordinates of the true signal where the
    /// signal is sparse.
    pub s: usize,
    /// Replications per grid point.
    pub b: usize,
    pub seed: u64,
    pub rho0: f64,
    pub rho1: f64,
    pub d_sq_grid: Vec<f64>,
    pub noise_grid: Vec<(f64, f64)>,
    pub n_grid: Vec<usize>,
    pub s_grid: Vec<usize>,
    /// Mixture separation where it is held fixed; `None` means `2/sqrt(p)`
    /// for the noise and coverage studies and `3/sqrt(p)` for the sparsity
    /// study.
    pub mixture_d: Option<f64>,
    pub ar1_rho: f64,
    /// Rescale the covariance so the linear predictor variance matches
    /// this value (Gaussian designs only).
    pub signal_var: Option<f64>,
    pub alpha: f64,
    /// Estimation study regime: `p = n` at every grid point, penalized
    /// fits.
    pub p_equals_n: bool,
    pub lambda: LambdaRule,
    pub solver: SolverOverrides,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            study: StudyKind::EfficiencyVsGap,
            n: 1000,
            p: 10,
            s: 10,
            b: 200,
            seed: 1,
            rho0: 0.1,
            rho1: 0.05,
            d_sq_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
            noise_grid: Vec::new(),
            n_grid: Vec::new(),
            s_grid: Vec::new(),
            mixture_d: None,
            ar1_rho: 0.2,
            signal_var: None,
            alpha: 0.05,
            p_equals_n: false,
            lambda: LambdaRule::default(),
            solver: SolverOverrides::default(),
        }
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidConfig("replication count must be >= 1".into()));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("dimensions n and p must be positive".into()));
        }
        NoiseModel::new(self.rho0, self.rho1)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.ar1_rho > -1.0 && self.ar1_rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "autoregressive correlation {} must lie in (-1, 1)",
                self.ar1_rho
            )));
        }
        if let LambdaRule::Fixed { value } = self.lambda {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!("fixed penalty {value} must be >= 0")));
            }
        }
        if let LambdaRule::Scaled { factor } = self.lambda {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::InvalidConfig(format!("penalty factor {factor} must be > 0")));
            }
        }
        match self.study {
            StudyKind::EfficiencyVsGap => {
                if self.d_sq_grid.is_empty() {
                    return Err(Error::InvalidConfig("d_sq_grid is empty".into()));
                }
                if self.d_sq_grid.iter().any(|&d| !(d.is_finite() && d >= 0.0)) {
                    return Err(Error::InvalidConfig("d_sq_grid entries must be finite and >= 0".into()));
                }
            }
            StudyKind::NoiseRates => {
                if self.noise_grid.is_empty() {
                    return Err(Error::InvalidConfig("noise_grid is empty".into()));
                }
                for &(r0, r1) in &self.noise_grid {
                    NoiseModel::new(r0, r1)?;
                }
            }
            StudyKind::EstimationError => {
                if self.n_grid.is_empty() {
                    return Err(Error::InvalidConfig("n_grid is empty".into()));
                }
                if self.n_grid.iter().any(|&n| n == 0) {
                    return Err(Error::InvalidConfig("n_grid entries must be positive".into()));
                }
                if self.s == 0 || (!self.p_equals_n && self.s > self.p) {
                    return Err(Error::InvalidConfig(format!(
                        "sparsity s = {} must lie in [1, p]",
                        self.s
                    )));
                }
                if self.p_equals_n && self.n_grid.iter().any(|&n| self.s > n) {
                    return Err(Error::InvalidConfig("sparsity s exceeds a grid sample size".into()));
                }
            }
            StudyKind::SparsityRatio => {
                if self.s_grid.is_empty() {
                    return Err(Error::InvalidConfig("s_grid is empty".into()));
                }
                if self.s_grid.iter().any(|&s| s == 0 || s > self.p) {
                    return Err(Error::InvalidConfig("s_grid entries must lie in [1, p]".into()));
                }
            }
            StudyKind::Coverage => {
                if self.s == 0 || self.s > self.p {
                    return Err(Error::InvalidConfig(format!(
                        "sparsity s = {} must lie in [1, p]",
                        self.s
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One aggregated table cell.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub grid: f64,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub b_used: usize,
    pub b_failed: usize,
}

/// Aggregated study output; [`StudyResult::to_csv_string`] renders the
/// deterministic table.
#[derive(Clone, Debug)]
pub struct StudyResult {
    pub study: StudyKind,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    /// Renders the rows as CSV with a fixed header, `\n` line endings and
    /// floats at full precision. Contains no timestamps or environment
    /// details, so reruns of the same spec produce identical bytes.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("study,grid,metric,mean,stderr,b_used,b_failed\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{},{:.16e},{:.16e},{},{}\n",
                self.study, row.grid, row.metric, row.mean, row.stderr, row.b_used, row.b_failed
            ));
        }
        out
    }
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidData("rank correlation needs at least two pairs".into()));
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("rank correlation inputs must be finite".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidData("rank correlation undefined for constant input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// True when the mean squared gap is nondecreasing along the grid, allowing
/// at most one adjacent inversion no larger than the pooled standard error
/// of the two cells. Errors when the result carries no squared-gap rows.
pub fn check_monotone_gap(result: &StudyResult) -> Result<bool> {
    let mut rows: Vec<&StudyRow> = result.rows.iter().filter(|r| r.metric == "gap_sq").collect();
    if rows.is_empty() {
        return Err(Error::MetricUnavailable {
            study: result.study.to_string(),
            metric: "gap_sq".into(),
        });
    }
    rows.sort_by(|a, b| a.grid.partial_cmp(&b.grid).unwrap());
    let mut inversions = 0;
    for w in rows.windows(2) {
        let (prev, next) = (w[0], w[1]);
        if next.mean < prev.mean {
            inversions += 1;
            let slack = (prev.stderr * prev.stderr + next.stderr * next.stderr).sqrt();
            if inversions > 1 || prev.mean - next.mean > slack {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn resolve_threads(threads: Option<usize>) -> usize {
    threads
        .or_else(|| std::env::var("NOISYGLM_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0)
}

/// Runs every grid point of the study, replications in parallel. `threads`
/// overrides the pool size; otherwise the `NOISYGLM_THREADS` environment
/// variable applies, and failing that the default pool width. The output
/// does not depend on the pool size.
pub fn run_study(spec: &StudySpec, threads: Option<usize>) -> Result<StudyResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(threads))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_study_inner(spec))
}

fn run_study_inner(spec: &StudySpec) -> Result<StudyResult> {
    let grid_points = grid_values(spec);
    let mut rows = Vec::new();
    for (g_idx, grid) in grid_points.iter().enumerate() {
        let outcomes: Vec<Option<Vec<(&'static str, f64)>>> = (0..spec.b)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(spec.seed, (g_idx * spec.b + r) as u64);
                run_replication(spec, *grid, seed).ok()
            })
            .collect();
        aggregate(spec, *grid, &outcomes, &mut rows);
    }
    Ok(StudyResult { study: spec.study, rows })
}

fn grid_values(spec: &StudySpec) -> Vec<f64> {
    match spec.study {
        StudyKind::EfficiencyVsGap => spec.d_sq_grid.clone(),
        StudyKind::NoiseRates => spec.noise_grid.iter().map(|&(r0, _)| r0).collect(),
        StudyKind::EstimationError => spec.n_grid.iter().map(|&n| n as f64).collect(),
        StudyKind::SparsityRatio => spec.s_grid.iter().map(|&s| s as f64).collect(),
        StudyKind::Coverage => vec![0.0],
    }
}

fn base_metrics(spec: &StudySpec) -> Vec<&'static str> {
    match spec.study {
        StudyKind::EfficiencyVsGap => {
            vec!["gap_sq", "rd", "one_minus_rd", "amse_lik", "amse_sur", "mse_lik", "mse_sur"]
        }
        StudyKind::NoiseRates => vec!["gap_sq", "mse_lik", "mse_sur"],
        StudyKind::EstimationError => vec!["l2err_lik", "l2err_sur"],
        StudyKind::SparsityRatio => vec![
            "mse_lik",
            "mse_sur",
            "smse_lik",
            "smse_sur",
            "lambda_lik",
            "lambda_sur",
            "l1_l2_ratio",
        ],
        StudyKind::Coverage => {
            let mut names = Vec::new();
            if spec.p < spec.n {
                names.extend(["coverage_all_lik", "coverage_nzero_lik", "coverage_zero_lik", "ci_length_lik"]);
                names.extend(["coverage_all_sur", "coverage_nzero_sur", "coverage_zero_sur", "ci_length_sur"]);
            }
            names.extend([
                "coverage_all_lik_db",
                "coverage_nzero_lik_db",
                "coverage_zero_lik_db",
                "ci_length_lik_db",
            ]);
            names.extend([
                "coverage_all_sur_db",
                "coverage_nzero_sur_db",
                "coverage_zero_sur_db",
                "ci_length_sur_db",
            ]);
            names
        }
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Ratio of means with a first-order (delta method) standard error that
/// accounts for the covariance of the paired per-replication values.
fn ratio_of_means(num: &[f64], den: &[f64]) -> (f64, f64) {
    if num.is_empty() || den.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let b = num.len() as f64;
    let mn = num.iter().sum::<f64>() / b;
    let md = den.iter().sum::<f64>() / b;
    let r = mn / md;
    if num.len() < 2 {
        return (r, 0.0);
    }
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cab = 0.0;
    for i in 0..num.len() {
        let da = num[i] - mn;
        let db = den[i] - md;
        va += da * da;
        vb += db * db;
        cab += da * db;
    }
    let denom = b - 1.0;
    va /= denom;
    vb /= denom;
    cab /= denom;
    let var_r = (va + r * r * vb - 2.0 * r * cab) / (md * md) / b;
    (r, var_r.max(0.0).sqrt())
}

fn aggregate(
    spec: &StudySpec,
    grid: f64,
    outcomes: &[Option<Vec<(&'static str, f64)>>],
    rows: &mut Vec<StudyRow>,
) {
    let b_failed = outcomes.iter().filter(|o| o.is_none()).count();
    let b_used = outcomes.len() - b_failed;
    let lookup = |name: &str| -> Vec<f64> {
        outcomes
            .iter()
            .flatten()
            .map(|rep| {
                rep.iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .unwrap_or(f64::NAN)
            })
            .collect()
    };
    let mut push = |metric: &str, mean: f64, stderr: f64| {
        rows.push(StudyRow { grid, metric: metric.to_string(), mean, stderr, b_used, b_failed });
    };

    for name in base_metrics(spec) {
        let values = lookup(name);
        let (mean, stderr) = mean_and_stderr(&values);
        push(name, mean, stderr);
    }
    match spec.study {
        StudyKind::EfficiencyVsGap => {
            let (r, se) = ratio_of_means(&lookup("mse_lik"), &lookup("mse_sur"));
            push("r_mse", r, se);
            let (r, se) = ratio_of_means(&lookup("amse_lik"), &lookup("amse_sur"));
            push("r_amse", r, se);
        }
        StudyKind::NoiseRates => {
            let (r, se) = ratio_of_means(&lookup("mse_lik"), &lookup("mse_sur"));
            push("r_mse", r, se);
        }
        StudyKind::SparsityRatio => {
            let (r, se) = ratio_of_means(&lookup("mse_lik"), &lookup("mse_sur"));
            push("r_mse", r, se);
            let (r, se) = ratio_of_means(&lookup("smse_lik"), &lookup("smse_sur"));
            push("r_smse", r, se);
        }
        StudyKind::EstimationError => {
            push("l2err_median_lik", median(&lookup("l2err_lik")), 0.0);
            push("l2err_median_sur", median(&lookup("l2err_sur")), 0.0);
        }
        StudyKind::Coverage => {}
    }
}

fn run_replication(spec: &StudySpec, grid: f64, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    match spec.study {
        StudyKind::EfficiencyVsGap => efficiency_rep(spec, grid, seed),
        StudyKind::NoiseRates => noise_rep(spec, grid, seed),
        StudyKind::EstimationError => estimation_rep(spec, grid as usize, seed),
        StudyKind::SparsityRatio => sparsity_rep(spec, grid as usize, seed),
        StudyKind::Coverage => coverage_rep(spec, seed),
    }
}

fn dense_beta0(p: usize) -> DVector<f64> {
    DVector::from_element(p, 1.0 / (p as f64).sqrt())
}

fn split_beta0(p: usize, s: usize) -> DVector<f64> {
    let pos = s.div_ceil(2);
    DVector::from_fn(p, |j, _| {
        if j < pos {
            1.0
        } else if j < s {
            -1.0
        } else {
            0.0
        }
    })
}

fn sparse_unit_beta0(p: usize, s: usize) -> DVector<f64> {
    let v = 1.0 / (s as f64).sqrt();
    DVector::from_fn(p, |j, _| if j < s { v } else { 0.0 })
}

fn apply_overrides(cfg: &mut FitConfig, ov: &SolverOverrides) {
    if let Some(m) = ov.max_iter {
        cfg.max_iter = m;
    }
    if let Some(t) = ov.tol_gradmap {
        cfg.tol_gradmap = Some(t);
    }
    if let Some(t) = ov.tol_obj {
        cfg.tol_obj = t;
    }
}

fn require_converged(term: Termination, iterations: usize) -> Result<()> {
    if term == Termination::MaxIter {
        Err(Error::DidNotConverge { iterations })
    } else {
        Ok(())
    }
}

/// Surrogate fit first, then the likelihood fit warm-started from it with a
/// ball wide enough to stay inactive.
fn fit_pair(
    data: &Dataset,
    nm: &NoiseModel,
    lambda_sur: f64,
    lambda_lik: f64,
    ov: &SolverOverrides,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut cs = FitConfig::new(LossKind::Surrogate);
    cs.lambda = lambda_sur;
    apply_overrides(&mut cs, ov);
    let fs = fit(data, nm, &cs)?;
    require_converged(fs.termination, fs.iterations)?;

    let mut cl = FitConfig::new(LossKind::Likelihood);
    cl.lambda = lambda_lik;
    cl.radius = Some(100.0 * fs.beta.norm().max(1.0));
    cl.init = Init::Warm(fs.beta.clone());
    apply_overrides(&mut cl, ov);
    let fl = fit(data, nm, &cl)?;
    require_converged(fl.termination, fl.iterations)?;
    Ok((fl.beta, fs.beta))
}

fn mean_column_sd(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut total = 0.0;
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        total += var.sqrt();
    }
    total / x.ncols() as f64
}

/// Penalty for one route under the configured rule. The test-set rule
/// walks the default grid warm-started and scores each fit on the held-out
/// sample.
fn resolve_lambda(
    rule: LambdaRule,
    kind: LossKind,
    data: &Dataset,
    nm: &NoiseModel,
    ov: &SolverOverrides,
    test: Option<&Dataset>,
) -> Result<f64> {
    match rule {
        LambdaRule::Fixed { value } => Ok(value),
        LambdaRule::Scaled { factor } => {
            let p = data.p() as f64;
            Ok(factor * mean_column_sd(data.x()) * (p.ln() / data.n() as f64).sqrt())
        }
        LambdaRule::Cv { folds } => {
            let mut cfg = FitConfig::new(kind);
            apply_overrides(&mut cfg, ov);
            let lmax = lambda_max(data, nm, &cfg)?;
            let grid = default_lambda_grid(lmax)?;
            let (lambda, _) = cv_select_lambda(data, nm, &cfg, folds, &grid)?;
            Ok(lambda)
        }
        LambdaRule::TestSet => {
            let test = test.ok_or_else(|| {
                Error::InvalidConfig("test-set tuning needs a held-out sample".into())
            })?;
            let mut cfg = FitConfig::new(kind);
            apply_overrides(&mut cfg, ov);
            let lmax = lambda_max(data, nm, &cfg)?;
            let grid = default_lambda_grid(lmax)?;
            let mut best = (grid[0], f64::INFINITY);
            let mut warm: Option<DVector<f64>> = None;
            for &lambda in &grid {
                let mut c = cfg.clone();
                c.lambda = lambda;
                if let Some(w) = &warm {
                    c.init = Init::Warm(w.clone());
                }
                let fr = fit(data, nm, &c)?;
                let score = loss_value(kind, &fr.beta, test, nm)?;
                if score <= best.1 {
                    best = (lambda, score);
                }
                warm = Some(fr.beta);
            }
            Ok(best.0)
        }
    }
}

fn mixture_design(spec: &StudySpec, separation: f64) -> Design {
    Design::Mixture { cov: Ar1Cov { rho: spec.ar1_rho, scale: 1.0 }, separation }
}

fn draw_labeled(
    x: DMatrix<f64>,
    beta0: &DVector<f64>,
    nm: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let y = gen_labels(&x, beta0, rng)?;
    let z = flip_labels(&y, nm, rng);
    Dataset::new(x, z)
}

fn efficiency_rep(spec: &StudySpec, d_sq: f64, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let nm = NoiseModel::new(spec.rho0, spec.rho1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta0 = dense_beta0(spec.p);
    let x = gen_design(spec.n, spec.p, &mixture_design(spec, d_sq.sqrt()), &mut rng)?;
    let info = info_matrices(&x, &beta0, &nm)?;
    let data = draw_labeled(x, &beta0, &nm, &mut rng)?;
    let (beta_l, beta_s) = fit_pair(&data, &nm, 0.0, 0.0, &spec.solver)?;
    let mse_l = (&beta_l - &beta0).norm_squared();
    let mse_s = (&beta_s - &beta0).norm_squared();
    Ok(vec![
        ("gap_sq", info.gap * info.gap),
        ("rd", info.rel_l2_diff),
        ("one_minus_rd", 1.0 - info.rel_l2_diff),
        ("amse_lik", info.amse_lik),
        ("amse_sur", info.amse_sur),
        ("mse_lik", mse_l),
        ("mse_sur", mse_s),
    ])
}

fn noise_rep(spec: &StudySpec, rho0: f64, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let pair = spec
        .noise_grid
        .iter()
        .find(|&&(r0, _)| r0 == rho0)
        .copied()
        .ok_or_else(|| Error::InvalidConfig("noise grid lookup failed".into()))?;
    let nm = NoiseModel::new(pair.0, pair.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta0 = dense_beta0(spec.p);
    let d = spec.mixture_d.unwrap_or(2.0 / (spec.p as f64).sqrt());
    let x = gen_design(spec.n, spec.p, &mixture_design(spec, d), &mut rng)?;
    let info = info_matrices(&x, &beta0, &nm)?;
    let data = draw_labeled(x, &beta0, &nm, &mut rng)?;
    let (beta_l, beta_s) = fit_pair(&data, &nm, 0.0, 0.0, &spec.solver)?;
    Ok(vec![
        ("gap_sq", info.gap * info.gap),
        ("mse_lik", (&beta_l - &beta0).norm_squared()),
        ("mse_sur", (&beta_s - &beta0).norm_squared()),
    ])
}

fn gaussian_signal_design(spec: &StudySpec, beta0: &DVector<f64>) -> Result<Design> {
    let base = Ar1Cov { rho: spec.ar1_rho, scale: 1.0 };
    let cov = match spec.signal_var {
        Some(target) => {
            let mult = scale_covariance_for_signal(beta0, &base, target)?;
            Ar1Cov { rho: base.rho, scale: base.scale * mult }
        }
        None => base,
    };
    Ok(Design::Gaussian { cov })
}

fn estimation_rep(spec: &StudySpec, n: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let nm = NoiseModel::new(spec.rho0, spec.rho1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = if spec.p_equals_n { n } else { spec.p };
    let beta0 = split_beta0(p, spec.s);
    let design = gaussian_signal_design(spec, &beta0)?;
    let x = gen_design(n, p, &design, &mut rng)?;
    let data = draw_labeled(x, &beta0, &nm, &mut rng)?;
    let (beta_l, beta_s) = if spec.p_equals_n {
        let ls = resolve_lambda(spec.lambda, LossKind::Surrogate, &data, &nm, &spec.solver, None)?;
        let ll = resolve_lambda(spec.lambda, LossKind::Likelihood, &data, &nm, &spec.solver, None)?;
        fit_pair(&data, &nm, ls, ll, &spec.solver)?
    } else {
        fit_pair(&data, &nm, 0.0, 0.0, &spec.solver)?
    };
    Ok(vec![
        ("l2err_lik", (&beta_l - &beta0).norm()),
        ("l2err_sur", (&beta_s - &beta0).norm()),
    ])
}

fn sparsity_rep(spec: &StudySpec, s: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let nm = NoiseModel::new(spec.rho0, spec.rho1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta0 = sparse_unit_beta0(spec.p, s);
    let d = spec.mixture_d.unwrap_or(3.0 / (spec.p as f64).sqrt());
    let design = mixture_design(spec, d);
    let x = gen_design(spec.n, spec.p, &design, &mut rng)?;
    let data = draw_labeled(x, &beta0, &nm, &mut rng)?;
    let test = if matches!(spec.lambda, LambdaRule::TestSet) {
        let xt = gen_design(spec.n, spec.p, &design, &mut rng)?;
        Some(draw_labeled(xt, &beta0, &nm, &mut rng)?)
    } else {
        None
    };

    let (beta_l, beta_s) = fit_pair(&data, &nm, 0.0, 0.0, &spec.solver)?;
    let ls = resolve_lambda(spec.lambda, LossKind::Surrogate, &data, &nm, &spec.solver, test.as_ref())?;
    let ll = resolve_lambda(spec.lambda, LossKind::Likelihood, &data, &nm, &spec.solver, test.as_ref())?;
    let (beta_l_pen, beta_s_pen) = fit_pair(&data, &nm, ls, ll, &spec.solver)?;

    Ok(vec![
        ("mse_lik", (&beta_l - &beta0).norm_squared()),
        ("mse_sur", (&beta_s - &beta0).norm_squared()),
        ("smse_lik", (&beta_l_pen - &beta0).norm_squared()),
        ("smse_sur", (&beta_s_pen - &beta0).norm_squared()),
        ("lambda_lik", ll),
        ("lambda_sur", ls),
        ("l1_l2_ratio", (s as f64).sqrt()),
    ])
}

fn coverage_stats(
    out: &mut Vec<(&'static str, f64)>,
    names: [&'static str; 4],
    beta0: &DVector<f64>,
    s: usize,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) {
    let p = beta0.len();
    let covered = |j: usize| lo[j] <= beta0[j] && beta0[j] <= hi[j];
    let count = |range: std::ops::Range<usize>| {
        let len = range.len();
        if len == 0 {
            return f64::NAN;
        }
        range.filter(|&j| covered(j)).count() as f64 / len as f64
    };
    let all = (0..p).filter(|&j| covered(j)).count() as f64 / p as f64;
    let mut length = 0.0;
    for j in 0..p {
        length += hi[j] - lo[j];
    }
    out.push((names[0], all));
    out.push((names[1], count(0..s)));
    out.push((names[2], count(s..p)));
    out.push((names[3], length / p as f64));
}

fn coverage_rep(spec: &StudySpec, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let nm = NoiseModel::new(spec.rho0, spec.rho1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p, s) = (spec.n, spec.p, spec.s);
    let beta0 = sparse_unit_beta0(p, s);
    let d = spec.mixture_d.unwrap_or(2.0 / (p as f64).sqrt());
    let x = gen_design(n, p, &mixture_design(spec, d), &mut rng)?;
    let data = draw_labeled(x, &beta0, &nm, &mut rng)?;
    let zq = normal_quantile(1.0 - spec.alpha / 2.0)?;
    let low_dim = p < n;
    let mut out = Vec::new();

    if low_dim {
        let (beta_l, beta_s) = fit_pair(&data, &nm, 0.0, 0.0, &spec.solver)?;
        for (beta, names, pick_lik) in [
            (
                &beta_l,
                ["coverage_all_lik", "coverage_nzero_lik", "coverage_zero_lik", "ci_length_lik"],
                true,
            ),
            (
                &beta_s,
                ["coverage_all_sur", "coverage_nzero_sur", "coverage_zero_sur", "ci_length_sur"],
                false,
            ),
        ] {
            let info = info_matrices(data.x(), beta, &nm)?;
            let inv = if pick_lik { &info.inv_lik } else { &info.inv_sur };
            let mut lo = DVector::zeros(p);
            let mut hi = DVector::zeros(p);
            for j in 0..p {
                let se = (inv[(j, j)] / n as f64).sqrt();
                lo[j] = beta[j] - zq * se;
                hi[j] = beta[j] + zq * se;
            }
            coverage_stats(&mut out, names, &beta0, s, &lo, &hi);
        }
    }

    let ls = resolve_lambda(spec.lambda, LossKind::Surrogate, &data, &nm, &spec.solver, None)?;
    let ll = resolve_lambda(spec.lambda, LossKind::Likelihood, &data, &nm, &spec.solver, None)?;
    let (beta_l_pen, beta_s_pen) = fit_pair(&data, &nm, ls, ll, &spec.solver)?;
    for (beta, kind, names) in [
        (
            &beta_l_pen,
            LossKind::Likelihood,
            [
                "coverage_all_lik_db",
                "coverage_nzero_lik_db",
                "coverage_zero_lik_db",
                "ci_length_lik_db",
            ],
        ),
        (
            &beta_s_pen,
            LossKind::Surrogate,
            [
                "coverage_all_sur_db",
                "coverage_nzero_sur_db",
                "coverage_zero_sur_db",
                "ci_length_sur_db",
            ],
        ),
    ] {
        let psi = PsiSpec::new(kind, nm);
        let theta = if low_dim {
            exact_theta(data.x(), beta, &psi)?
        } else {
            let lam = default_nodewise_lambda(data.x(), beta, &psi)?;
            nodewise_theta(data.x(), beta, &psi, &vec![lam; p])?.0
        };
        let report = debias(&data, beta, &psi, &theta, spec.alpha)?;
        coverage_stats(&mut out, names, &beta0, s, &report.ci_low, &report.ci_high);
    }
    Ok(out)
}
