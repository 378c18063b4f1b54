use thiserror::Error;

/// Errors produced by the fitting and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty neighborhood at t0 = {t0}")]
    EmptyNeighborhood { t0: f64 },

    #[error("degenerate weights: all raw weights are zero")]
    DegenerateWeights,

    #[error("degenerate covariance{}", t0.map(|t| format!(" at t0 = {t}")).unwrap_or_default())]
    DegenerateCovariance { t0: Option<f64> },

    #[error("singular tangent at t = {t}")]
    SingularTangent { t: f64 },

    #[error("tube fit failed: {failed} of {total} sections could not be fitted")]
    TubeFitFailed { failed: usize, total: usize },

    #[error("surface export failed: {0}")]
    Export(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unsupported file version {found}, supported: {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
