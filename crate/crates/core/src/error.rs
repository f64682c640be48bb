use thiserror::Error;

/// Errors raised by the solvers and numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("iteration budget of {0} exhausted")]
    MaxIterations(usize),

    #[error("step size underflow at t = {t} (step {step:e})")]
    StepUnderflow { t: f64, step: f64 },

    #[error("non-finite value at x = {0}")]
    NonFinite(f64),

    #[error("profile is not differentiable at y = {0}")]
    NotDifferentiable(f64),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("no height candidate solves the length constraint")]
    NoCandidate,

    #[error("search budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("denominator degenerates (q -> I with p > 0)")]
    DegenerateDenominator,

    #[error("singular right-hand side at y = {0}")]
    Singularity(f64),

    #[error("no residual bracket found on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("not converged after {iterations} iterations (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
