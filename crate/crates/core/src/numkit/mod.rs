//! Dense linear algebra substrate: matrices, products, truncated SVD and a seeded RNG.
//!
//! Everything is `f64` and row-major.

mod matrix;
mod rng;
mod svd;

pub use matrix::{dot, frobenius_norm, matmul, norm2, random_matrix, sigmoid, transpose, Matrix};
pub use rng::Rng;
pub use svd::{thin_svd, truncated_svd, SvdResult};
