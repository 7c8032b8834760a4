use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: |m|={m}, |n|={n} must not exceed l={l}")]
    IndexOutOfRange { l: i64, m: i64, n: i64 },

    #[error("invalid degree: l={l} is below the minimum {min}")]
    InvalidDegree { l: i64, min: i64 },

    #[error("invalid bandwidth B={0}: must be greater than 1")]
    InvalidBandwidth(f64),

    #[error("invalid spectrum model: {0}")]
    InvalidModel(String),

    #[error("invalid smoothness order {0}: must be at least 1")]
    InvalidSmoothness(u32),

    #[error("resource limit: {what} would need {requested}, cap is {cap}")]
    ResourceLimit {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("empty observed region: no pixel survives the mask")]
    EmptyObservedRegion,

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("band limit exceeded at level j={j}: window needs l_max={l_max}, available {available}")]
    BandLimitExceeded { j: u32, l_max: usize, available: usize },

    #[error("coverage gap at degree l={l}: sum of squared window values is {coverage}")]
    CoverageGap { l: usize, coverage: f64 },

    #[error("invalid channel count D={0} for this estimator")]
    InvalidChannelCount(usize),

    #[error("missing noise model for channel {0}")]
    MissingNoiseModel(usize),

    #[error("non-positive variance {0}")]
    NonpositiveVariance(f64),

    #[error("too few subsampling blocks: {blocks} blocks with at least {min_pixels} pixels, need {needed}")]
    TooFewBlocks {
        blocks: usize,
        min_pixels: usize,
        needed: usize,
    },

    #[error("too few levels for a slope fit: {0}, need at least 4")]
    TooFewLevels(usize),

    #[error("too few samples: {got}, need at least {needed}")]
    TooFewSamples { got: usize, needed: usize },

    #[error("masked flag mismatch: estimator expects masked={expected}, coefficients have masked={found}")]
    MaskedFlagMismatch { expected: bool, found: bool },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid plan field `{field}`: {reason}")]
    InvalidPlan { field: String, reason: String },

    #[error("{failed} of {total} replicates failed (first error: {first})")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
