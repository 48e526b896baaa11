use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel table would need {needed} entries, budget is {budget}")]
    MemoryBudget { needed: u64, budget: u64 },

    #[error("step count {n} exceeds kernel n_max {n_max}")]
    StepOutOfRange { n: usize, n_max: usize },

    #[error("site with 1-norm {norm} lies outside the kernel radius {radius} at step {n}")]
    OutsideTable { norm: usize, radius: usize, n: usize },

    #[error("kernel n_max {n_max} too small: Poisson({t}) tail needs n_max >= {required} for eps {eps:e}")]
    InsufficientSteps { t: f64, eps: f64, n_max: usize, required: usize },

    #[error("tolerance {requested:e} not achievable: tail bound is {achieved:e} at n_max {n_max}")]
    ToleranceNotAchievable { requested: f64, achieved: f64, n_max: usize },

    #[error("endpoint unreachable within the kernel truncation (t={t}, target 1-norm {norm})")]
    Unreachable { t: f64, norm: usize },

    #[error("box too small: truncation error {error:e} exceeds tolerance {tolerance:e}")]
    BoxTooSmall { error: f64, tolerance: f64 },

    #[error("horizon {horizon} violates 0 < H <= t/2 with t = {t}")]
    Horizon { horizon: f64, t: f64 },

    #[error("integrator became unstable at step {step}")]
    Unstable { step: usize },

    #[error("l = {l} exceeds the quadrature cost bound {max}")]
    QuadratureTooLarge { l: usize, max: usize },

    #[error("quadrature failed near the singularity (eps = {eps}): {reason}")]
    Quadrature { eps: f64, reason: String },

    #[error("outside the small-beta regime: {0}")]
    Regime(String),

    #[error("not enough tail events: {0}")]
    InsufficientEvents(String),

    #[error("malformed kernel cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
