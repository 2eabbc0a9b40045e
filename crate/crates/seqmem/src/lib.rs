//! Linear memory toolkit for sequence models.
//!
//! `seqmem` trains the memory of a recurrent network *before* training
//! the network: a linear autoencoder over input prefixes has a closed-form
//! optimum computable by SVD, and its encoder matrices transplant directly
//! into recurrent architectures as an initialization that already knows how
//! to store sequences. The crate covers the full pipeline:
//!
//! * [`numerics`] — dense matrices, deterministic RNG, SVD/QR/eigen kernels.
//! * [`laes`] — the linear autoencoder for sequences: closed-form fit,
//!   encoding, and unrolled decoding.
//! * [`models`] — linear RNN, Elman RNN, LMN, and LSTM forward passes.
//! * [`init`] — encoder-based and orthogonal initializers plus linear heads.
//! * [`training`] — BPTT with Adam, soft orthogonality, activation
//!   regularization, and stochastic gradient truncation.
//! * [`diagnostics`] — gradient-propagation curves, lag-reconstruction
//!   probes, and image round-trips.
//! * [`data`] — IDX loading, sequence shaping, splits, synthetic tasks.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod init;
pub mod laes;
pub mod models;
pub mod numerics;
pub mod training;
