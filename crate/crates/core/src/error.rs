use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("invalid smoothness parameters: {0}")]
    InvalidSmoothness(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The truncated covering bound only holds for δ above a floor set by the threshold.
    #[error("delta below the admissible minimum {min_delta:e} (ln = {ln_min_delta})")]
    DeltaTooSmall { min_delta: f64, ln_min_delta: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("density failed the symmetry/monotonicity spot check: {0}")]
    Asymmetric(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("network has {params} parameters, sampler cap is {cap}")]
    TooManyParameters { params: usize, cap: usize },

    #[error("non-finite target: {0}")]
    NonFinite(String),

    #[error("model descriptors do not match: {0}")]
    Mismatch(String),

    #[error("unknown density `{0}` (expected one of: mixture, gauss, laplace, uniform-slab)")]
    UnknownDensity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
