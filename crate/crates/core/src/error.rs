use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// `Numerical` failures (truncation watchdog, positivity loss, step-size
/// refusal) are distinguished from input errors so that callers can map them
/// to different exit paths.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotorError {
    #[error("invalid quantum numbers: {0}")]
    QuantumNumbers(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("unsupported top class: {0}")]
    UnsupportedTop(String),

    #[error("step size too large: dt * max|E| = {product:.3e} (limit {limit}) at t = {time:.6} ps")]
    StepSize { product: f64, limit: f64, time: f64 },

    #[error("truncation watchdog: population {population:.3e} in j >= {shell} exceeds {limit:.1e} at t = {time:.6} ps")]
    Truncation {
        population: f64,
        shell: u32,
        limit: f64,
        time: f64,
    },

    #[error("positivity violated: min eigenvalue {min_eigenvalue:.3e} at t = {time:.6} ps")]
    Positivity { min_eigenvalue: f64, time: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl RotorError {
    /// True for failures raised while integrating, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RotorError::StepSize { .. }
                | RotorError::Truncation { .. }
                | RotorError::Positivity { .. }
                | RotorError::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, RotorError>;
