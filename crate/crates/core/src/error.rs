use thiserror::Error;

/// Errors raised by the library. Each variant maps onto one failure class
/// so that drivers (the CLI in particular) can pick an exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdraError {
    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {what} {index}")]
    NumericalDomain { what: &'static str, index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("{path}:{line}: {message}")]
    Ingestion {
        path: String,
        line: usize,
        message: String,
    },

    #[error("oracle did not converge after {iters} iterations (residual {residual:e})")]
    Oracle { iters: u64, residual: f64 },

    #[error("solver failed at iteration {iter}: {source}")]
    Solver {
        iter: u64,
        #[source]
        source: Box<PdraError>,
    },

    #[error("property violated: {0}")]
    Property(String),
}

impl PdraError {
    /// True for errors caused by bad input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PdraError::Instance(_)
                | PdraError::Dimension { .. }
                | PdraError::Config(_)
                | PdraError::Argument(_)
                | PdraError::Ingestion { .. }
        )
    }
}

pub type Result<T, E = PdraError> = std::result::Result<T, E>;
