//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{context} must be finite")]
    NonFinite { context: String },

    #[error("regressor must vanish at the origin, got |Y(0)| = {norm:.3e}")]
    RegressorAtOrigin { norm: f64 },

    #[error("{what} must be {property}")]
    InvalidMatrix { what: String, property: &'static str },

    #[error("unknown plant '{0}' (available: scalar_lqr, double_integrator, cubic_oscillator)")]
    UnknownPlant(String),

    #[error("polynomial basis degree {0} rejected: features must vanish with zero gradient at the origin (degree >= 2)")]
    InvalidBasisDegree(u32),

    #[error("history stack is empty; the parameter update law needs recorded data")]
    EmptyHistoryStack,

    #[error("sample set is empty; the learning laws need at least one evaluation point")]
    EmptySampleSet,

    #[error("index {index} has no neighbor on both sides (series length {len}); boundary derivative estimates are not recorded")]
    DerivativeBoundary { index: usize, len: usize },

    #[error("Riccati iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    RiccatiDiverged { residual: f64, iterations: usize },

    #[error("Lyapunov solve failed: closed-loop matrix is singular or the supplied gain is not stabilizing")]
    LyapunovSingular,

    #[error("ideal-weight mapping needs the full degree-2 monomial basis, got {0}")]
    BasisMismatch(String),

    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("simulation aborted at t = {t:.6}: {reason}")]
    SimulationAborted { t: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
