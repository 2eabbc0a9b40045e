//! Dense linear algebra and deterministic randomness.
//!
//! Everything downstream — the closed-form autoencoder fit, network
//! initialization, training — is built on this module. All routines are
//! deterministic: the same inputs produce bit-identical outputs across
//! runs, which the reproducibility guarantees elsewhere rely on.

mod eigen;
mod lstsq;
mod matrix;
mod qr;
mod rng;
mod svd;

pub use eigen::symmetric_eigen;
pub use lstsq::least_squares_fit;
pub use matrix::{dot, vec_norm, Matrix};
pub use qr::qr_thin;
pub use rng::SplitMix64;
pub use svd::{truncated_svd, SvdResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("rank k = {k} outside 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("{context}: non-finite value encountered")]
    NonFinite { context: &'static str },
    #[error("{context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("{context}: dimension must be positive")]
    EmptyDimension { context: &'static str },
}

/// A uniformly random n x n orthogonal matrix: thin QR of a seeded
/// standard-normal matrix, with the sign convention that makes the
/// factorization (and therefore the sample) unique.
pub fn random_orthogonal(n: usize, seed: u64) -> Result<Matrix, NumericsError> {
    if n == 0 {
        return Err(NumericsError::EmptyDimension { context: "random_orthogonal" });
    }
    let mut rng = SplitMix64::new(seed);
    let g = Matrix::from_fn(n, n, |_, _| rng.next_normal());
    let (q, _) = qr_thin(&g);
    Ok(q)
}
