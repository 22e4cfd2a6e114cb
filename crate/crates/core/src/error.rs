use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum DoaError {
    /// An input violated an operation's domain (bad angle, negative argument,
    /// non-Hermitian matrix, shape mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical quantity needed by the computation is degenerate.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// The splitting solver ran out of iterations before meeting its tolerances.
    #[error(
        "solver did not converge after {iterations} iterations \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e}, \
         constraint excess {constraint_excess:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        constraint_excess: f64,
        last_iterate: Vec<num_complex::Complex64>,
    },

    /// Polynomial rooting produced fewer admissible roots than requested.
    #[error("expected {expected} admissible roots, found {}", found.len())]
    RootPairing {
        expected: usize,
        found: Vec<num_complex::Complex64>,
    },

    /// MUSIC found fewer spectral peaks than requested sources.
    #[error("expected {expected} spectral peaks, found {}", found_deg.len())]
    MissingPeaks {
        expected: usize,
        found_deg: Vec<f64>,
    },

    /// A failure inside the reweighted loop, tagged with the outer iteration.
    #[error("outer iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<DoaError>,
    },
}

pub type Result<T> = std::result::Result<T, DoaError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(DoaError::Domain(msg.into()))
}
