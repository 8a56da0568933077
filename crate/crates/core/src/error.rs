use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ellipse {index} leaves the support ellipse x²/0.69² + y²/0.92² ≤ 1")]
    SupportViolation { index: usize },

    #[error("no admissible phantom after {attempts} resampling attempts")]
    SamplingExhausted { attempts: usize },

    #[error("time step {dt} exceeds the stability bound {limit} (cfl {cfl}, c_max {c_max})")]
    Cfl {
        dt: f64,
        limit: f64,
        cfl: f64,
        c_max: f64,
    },

    #[error("squared speed {peak} reaches the stability bound {bound} of the time step")]
    Unstable { peak: f64, bound: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("forward state does not match this solver: {0}")]
    MissingState(String),

    #[error("boundary record {index} has zero norm; the dataset is corrupted")]
    ZeroNormData { index: usize },

    #[error("non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("unknown speed law `{0}` (expected gamma1..gamma4)")]
    UnknownGamma(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
