use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid scaling ratio {0} (must be finite and > 0)")]
    InvalidRatio(f64),

    #[error("pixel ({x}, {y}) lies outside the box")]
    OutsideBox { x: f64, y: f64 },

    #[error("unsupported loss configuration: {0}")]
    UnsupportedCombination(String),

    #[error("epoch {epoch} outside schedule range [0, {total}]")]
    EpochOutOfRange { epoch: u32, total: u32 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),

    #[error("degenerate prediction box (w = {w}, h = {h}); gradients need w, h > 0")]
    DegenerateBox { w: f64, h: f64 },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("scenario generation failed: {0}")]
    GenerationFailure(String),

    #[error("non-finite {what} at iteration {iteration}, anchor {anchor}")]
    Numerical {
        what: &'static str,
        iteration: usize,
        anchor: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by the caller's input rather than by a failed computation.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::Numerical { .. } | Error::Io(_) | Error::Csv(_) | Error::GenerationFailure(_)
        )
    }
}
