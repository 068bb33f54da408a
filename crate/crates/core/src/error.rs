use thiserror::Error;

/// Errors raised by the lab's operations.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("operator symbol is identically zero")]
    DegenerateOperator,
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("operator does not have constant rank (rank {found} at {witness:?}, generic rank {generic})")]
    NotConstantRank {
        generic: usize,
        found: usize,
        witness: Vec<f64>,
    },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("field is not A-free: residual {residual:.3e} exceeds {tolerance:.1e}")]
    NotAFree { residual: f64, tolerance: f64 },
    #[error("radius {radius} is below the minimum of {min_cells} grid cells")]
    RadiusTooSmall { radius: f64, min_cells: f64 },
    #[error("solver diverged: {0}")]
    Diverged(String),
    #[error("conjugate gradient did not converge in {iterations} iterations (residual {residual:.3e})")]
    IllConditioned { iterations: usize, residual: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("field is not extremal: EL residual {0:.3e}")]
    NotExtremal(f64),
    #[error("kernel basis is rank deficient (condition estimate {0:.3e})")]
    KernelBasisDeficient(f64),
    #[error("average is not in the image of the top-order map (residual {0:.3e})")]
    NotInImage(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<LabError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}
