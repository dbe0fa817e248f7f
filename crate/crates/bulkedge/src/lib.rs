//! Numerical laboratory for real-space topological invariants of disordered
//! two-dimensional insulators.
//!
//! The crate builds bulk and edge tight-binding Hamiltonians on finite square
//! lattices, forms the associated Fredholm operators (flux insertion `PUP`,
//! corner winding `W1(P L2 P)`, edge winding `W1 g(H_edge)`), and extracts
//! Z-valued and Z2-valued indices by several independent routes:
//!
//! - spatially windowed Fedosov traces `tr (1-A*A)^n - tr (1-AA*)^n`,
//! - the Kubo commutator trace `-2 pi i tr P[d1 P, d2 P]`,
//! - trace-limit kernel counting `lim_n tr (1-A*A)^n`,
//! - localized near-kernel mode counting for the Z2 index of theta-odd
//!   operators.
//!
//! Independent clean-limit oracles (Berry-curvature Chern number, Fu-Kane
//! sewing-matrix Pfaffian, cylinder spectral flow) anchor every route, and a
//! homotopy monitor transports indices along operator paths while watching
//! spectral gaps, Fredholm gaps and locality residuals.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `bulkedge` binary for config-driven experiment runs.

// Force linkage of the system BLAS/LAPACK used by ndarray and ndarray-linalg.
use openblas_src as _;

pub mod cli;
pub mod error;
pub mod homotopy;
pub mod indices;
pub mod jets;
pub mod lattice;
pub mod models;
pub mod oracles;
pub mod spectral;
pub mod symmetry;

pub use error::{Error, Result};

/// Complex scalar used for all operator entries.
pub type C64 = num_complex::Complex64;
