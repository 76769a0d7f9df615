use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("line fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate line fit: points have no spread along the regression axis")]
    DegenerateFit,
    #[error("degenerate point geometry: no dominant line direction")]
    DegenerateGeometry,
    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scan log line {line}: {message}")]
    ScanLog { line: usize, message: String },
}
