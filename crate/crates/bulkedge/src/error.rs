//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("lattice coordinate ({x1}, {x2}, {s}) outside geometry")]
    OutOfRange { x1: i32, x2: i32, s: usize },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("operator is not hermitian (max |A - A^*| = {residual:.3e})")]
    NotHermitian { residual: f64 },

    #[error("operator is not a projection (max |Q^2 - Q| = {residual:.3e})")]
    NotAProjection { residual: f64 },

    #[error("Fermi level {mu} within {dist:.3e} of an eigenvalue; no spectral gap")]
    GapViolation { mu: f64, dist: f64 },

    #[error("switch-function window ({a}, {b}) not inside the bulk gap ({lo}, {hi})")]
    WindowOutsideGap { a: f64, b: f64, lo: f64, hi: f64 },

    #[error("all matrix elements below {floor:.1e}; operator numerically zero")]
    NumericallyZero { floor: f64 },

    #[error("decay fit failed: {0}")]
    FitFailed(String),

    #[error("trace sequence not converged at n_max = {n_max} (last raw = {raw:.6})")]
    NotConverged { n_max: u64, raw: f64 },

    #[error("near-kernel cluster ambiguous: gap ratio {gap_ratio:.2} below {required:.2}")]
    AmbiguousCluster { gap_ratio: f64, required: f64 },

    #[error("ambiguous localization: mode mass {mass:.3} inside [0.4, 0.6]")]
    AmbiguousLocalization { mass: f64 },

    #[error("operator violates the theta-odd constraint (residual {residual:.3e} > {tol:.3e})")]
    NotThetaOdd { residual: f64, tol: f64 },

    #[error("time reversal requires an even internal dimension, got {0}")]
    OddInternalDimension(usize),

    #[error("homotopy endpoint or sample failed: {0}")]
    PathFailed(String),

    #[error("gap closed along path at t = {t} (width {width:.3e})")]
    GapClosedOnPath { t: f64, width: f64 },

    #[error("numerical integrity violation: {0}")]
    NumericalIntegrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("linear algebra backend error: {0}")]
    Linalg(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
