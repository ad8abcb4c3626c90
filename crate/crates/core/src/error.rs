use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("point not in the upper half-plane: Im z = {0}")]
    NotInUpperHalfPlane(f64),

    #[error("subordination solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("stability matrix is singular (|det| = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("perturbation bound hypothesis failed: {0}")]
    HypothesisFailed(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("column {index} has a vanishing diagonal entry (|v_ii| = {modulus:e}); phase undefined")]
    DegenerateColumn { index: usize, modulus: f64 },

    #[error("linear solve failed for the shifted matrix H - z")]
    SolveFailure,

    #[error("eigensolver did not converge")]
    ConvergenceFailure,

    #[error("no eigenvalue falls inside [{lo}, {hi}]")]
    EmptySelection { lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure is numerical rather than a problem with the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::SingularJacobian { .. }
                | Error::SolveFailure
                | Error::ConvergenceFailure
                | Error::HypothesisFailed(_)
                | Error::DegenerateColumn { .. }
        )
    }
}
