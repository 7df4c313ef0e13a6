use thiserror::Error;

/// Errors shared across the noise model, losses, solvers, inference and the
/// simulation harness.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Noise rates must satisfy rho0 >= 0, rho1 >= 0 and rho0 + rho1 < 1.
    #[error("invalid noise rates rho0={rho0}, rho1={rho1}: need rho0 >= 0, rho1 >= 0, rho0 + rho1 < 1")]
    InvalidNoiseRates { rho0: f64, rho1: f64 },

    /// A noisy-label mean outside the attainable open interval (b, a + b).
    #[error("mean value {value} lies outside the attainable range ({lo}, {hi})")]
    MeanOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Column indices (zero-based) that are linearly dependent on earlier columns.
    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("{what} became non-finite at iteration {iter}")]
    NonFinite { what: &'static str, iter: usize },

    #[error("matrix inversion failed: {0} is singular or not positive definite")]
    SingularMatrix(&'static str),

    /// A node-wise regression target with no weighted variance left to explain.
    #[error("column {col} has zero weighted variance")]
    DegenerateColumn { col: usize },

    #[error("clean labels are required for this check but the dataset carries none")]
    MissingCleanLabels,

    /// A fit that stopped at its iteration budget without meeting tolerance;
    /// study replications treat this as a failure rather than a result.
    #[error("solver stopped at its iteration budget ({iterations} iterations) before reaching tolerance")]
    DidNotConverge { iterations: usize },

    /// Asking a study result for a metric its study kind never produces.
    #[error("study '{study}' does not produce metric '{metric}'")]
    MetricUnavailable { study: String, metric: String },
}

pub type Result<T> = std::result::Result<T, Error>;
