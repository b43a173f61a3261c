use thiserror::Error;

/// Errors produced by the decomposition pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// No index of the spectrum passes the gap test `phi[p] < xi * phi[p-1]`.
    #[error("rank undetectable: no singular value gap below ratio {xi}")]
    RankUndetectable { xi: f64, spectrum: Vec<f64> },

    /// The threshold lies on a singular value of the commutant operator.
    #[error("ambiguous threshold: delta {delta:e} is within tolerance of singular value {singular_value:e}")]
    AmbiguousThreshold { delta: f64, singular_value: f64 },

    /// The feasible set of the quartic program is empty.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    Convergence {
        iterations: usize,
        residual: f64,
        best_value: f64,
        best_point: Vec<f64>,
    },

    #[error("no reliable split: largest real-part gap {gap} is below {required}")]
    NoReliableSplit { gap: f64, required: f64 },

    #[error("split unstable: separation {sep:e}")]
    SplitUnstable { sep: f64 },

    #[error("ill-conditioned transformation (condition number {cond:e})")]
    IllConditioned { cond: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
