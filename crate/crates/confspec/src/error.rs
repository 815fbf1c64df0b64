use thiserror::Error;

/// Errors shared by all toolkit modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Mesh construction or validation failed (non-closed complex,
    /// degenerate cell, bad builder parameters).
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    /// A geodesic ball has no interior vertices at the requested radius.
    #[error("empty ball: center {center}, radius {radius}")]
    EmptyBall { center: usize, radius: f64 },

    /// A density violates positivity or normalization requirements.
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// Requested eigenvalue index exceeds what the discretization supports.
    #[error("eigenvalue index {k} out of range (only {available} degrees of freedom)")]
    IndexOutOfRange { k: usize, available: usize },

    /// Operation preconditions violated by the caller.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver failure in {what}: residuals {residuals:?}")]
    SolverFailure { what: String, residuals: Vec<f64> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Text formats (mesh files, configs) that fail to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
