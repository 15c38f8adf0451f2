//! Sketched finite element solver for many-query elliptic problems.
//!
//! The pipeline splits into an offline and an online phase:
//!
//! ```text
//! offline:  mesh -> D (shape gradients) -> Laplacian D^T D -> Psi (smallest eigvecs)
//!           -> artifact {D, D*Psi, Psi^T b, row norms, omega}
//! online:   p -> z = p * omega -> xi ~ z |(D Psi)_l|^2 -> c row samples
//!           -> G_hat = X^T S S^T X -> r_hat = G_hat^{-1} Psi^T b -> u_hat = Psi r_hat
//! ```
//!
//! [`analysis`] carries the diagnostics used to check the sampling and error
//! bounds at desk scale (dense SVD / eigendecomposition oracles).

pub mod analysis;
pub mod artifact;
pub mod assembly;
pub mod cholesky;
pub mod data;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod rng;
pub mod sketch;
pub mod sparse;
pub mod subspace;

pub use error::{Error, Result};
