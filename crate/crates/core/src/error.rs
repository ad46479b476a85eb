//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("reflectivity {0} outside [0, 1)")]
    ReflectivityOutOfRange(f64),
    #[error("wave count must be at least 1")]
    InvalidWaveCount,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("wavenumber grid must be non-empty, finite and strictly increasing")]
    InvalidGrid,
    #[error("subimage tiling needs {needed} slots but the focal plane offers {capacity}")]
    TilingOverflow { needed: usize, capacity: usize },
    #[error("pixel ({0}, {1}) out of bounds")]
    PixelOutOfBounds(usize, usize),
    #[error("kernel size must be an odd positive integer, got {0}")]
    EvenKernel(usize),
    #[error("percentile must lie in (0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("empty frame")]
    EmptyFrame,
    #[error("incident power must be positive and finite")]
    NonPositivePower,
    #[error("estimated gain is not positive at sigma = {0} cm^-1")]
    NonPositiveGain(f64),
    #[error("OPD search interval is empty or outside [0, 1/(2*mean step)]")]
    EmptyInterval,
    #[error("fringe amplitude {0} exceeds 1; inconsistent with a reflectivity in [0, 1)")]
    InconsistentAmplitude(f64),
    #[error("RMSE threshold must be positive and finite")]
    InvalidThreshold,
    #[error("threshold unattainable at any reflectivity")]
    ThresholdUnattainable,
    #[error("signal mean is zero; relative RMSE undefined")]
    ZeroMeanSignal,
    #[error("singular normal equations; increase damping")]
    SingularNormalEquations,
    #[error("non-finite residual during optimization")]
    NonFiniteResidual,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported datacube format version {0}")]
    UnsupportedFormatVersion(u32),
    #[error("unsupported payload dtype {0:?}")]
    UnsupportedDtype(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
