use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("operation undefined for the zero field")]
    ZeroField,

    #[error("fiber map evaluated at non-positive t = {0}")]
    NonPositiveT(f64),

    #[error("no Nehari projection: lambda = {lambda} >= lambda_crit = {lambda_crit}")]
    NoProjection { lambda: f64, lambda_crit: f64 },

    #[error("field is non-positive on {count} node(s) of the test support")]
    NonPositiveSupport { count: usize },

    #[error("missing constant: {0}")]
    MissingConstant(String),

    #[error("mountain-pass seed failed: {0}")]
    SeedFailure(String),

    #[error("solver aborted: {0}")]
    SolverAborted(String),

    #[error("convolution paths disagree: relative difference {0:e}")]
    ConvolutionMismatch(f64),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
