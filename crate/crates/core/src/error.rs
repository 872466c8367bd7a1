//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Node count below the minimum the topology kind supports.
    #[error("{kind} topology needs at least {min} nodes, got {n}")]
    InvalidNodeCount {
        kind: &'static str,
        min: usize,
        min_is_exact: bool,
        n: usize,
    },

    /// A static topology must be connected.
    #[error("graph is disconnected ({reachable} of {n} nodes reachable from node 0)")]
    Disconnected { reachable: usize, n: usize },

    /// Matrix square root requested for an indefinite matrix.
    #[error("matrix is not positive definite (lambda_min = {lambda_min:.3e} <= {tol:.1e})")]
    NotPositiveDefinite { lambda_min: f64, tol: f64 },

    /// Jacobi eigensolver failed to reach its off-diagonal tolerance.
    #[error("eigendecomposition did not converge after {sweeps} sweeps (off-diagonal norm {offdiag:.3e})")]
    EigenNoConvergence { sweeps: usize, offdiag: f64 },

    /// Shapes passed to an operation do not agree.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Minibatch size outside `1..=rows`.
    #[error("batch size {batch} invalid for {rows} local rows")]
    BadBatchSize { batch: usize, rows: usize },

    /// Normal equations too ill-conditioned to define a reference solution.
    #[error("normal equations are numerically singular (condition estimate {cond:.3e})")]
    SingularNormalEquations { cond: f64 },

    /// A schedule parameter is out of range.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// Iterates blew up during a run.
    #[error("divergence at iteration {iter}: relative error {value:.3e} exceeds {threshold:.1e}")]
    Divergence { iter: u64, value: f64, threshold: f64 },

    /// Scaling fit called with fewer points than the model has freedom.
    #[error("scaling fit needs at least {min} points, got {got}")]
    InsufficientPoints { min: usize, got: usize },

    /// Scaling fit called with at least one non-converged bias estimate.
    #[error("scaling fit input contains a non-converged estimate (index {index})")]
    NonConvergedInput { index: usize },

    /// Scaling fit called with a non-positive bias or abscissa (log-log fit).
    #[error("scaling fit needs positive values: {context} at index {index} is {value:.3e}")]
    NonPositiveFitValue {
        context: &'static str,
        index: usize,
        value: f64,
    },

    /// Config text failed validation; every violation is listed.
    #[error("invalid config:\n{}", issues.join("\n"))]
    Config { issues: Vec<String> },

    /// Problem file failed to parse.
    #[error("problem file parse error at line {line}: {message}")]
    ProblemParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for config validation failures.
    pub fn config(issues: Vec<String>) -> Self {
        Error::Config { issues }
    }
}
