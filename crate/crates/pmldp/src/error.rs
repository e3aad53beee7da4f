use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps `Config`-like variants to exit code 1 (validation failure)
/// and the numerical variants to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: got {found} nodes, grid has {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("Newton did not converge: residual {residual:.3e} after {iters} iterations")]
    NewtonDiverged { residual: f64, iters: usize },

    #[error("trajectory blow-up at step {step}: max |X| = {sup:.3e}")]
    BlowUp { step: usize, sup: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code contract: 1 = validation failure, 2 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::Io(_) => 1,
            Error::NonFinite(_)
            | Error::NewtonDiverged { .. }
            | Error::BlowUp { .. }
            | Error::Numerical(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
