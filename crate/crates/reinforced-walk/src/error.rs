use thiserror::Error;

/// Errors surfaced by the library. Numeric *violations* found by scans and
/// probes are not errors; they are carried inside the corresponding report
/// types. Errors mean the request itself was malformed or a hard internal
/// contract broke.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid simplex point: {0}")]
    InvalidSimplex(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("time {t} outside the covered window [{lo}, {hi}]")]
    WindowExceeded { t: f64, lo: f64, hi: f64 },

    #[error("noise samples not recorded for the requested range {0}..{1}")]
    NoiseNotRecorded(u64, u64),

    #[error("trajectory tail is empty")]
    EmptyTail,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("jacobi eigensolver did not converge")]
    EigenNoConvergence,

    #[error("integrator misconfigured: coordinate {coord:e} below -1e-9 at t={t}")]
    IntegratorMisconfigured { coord: f64, t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
