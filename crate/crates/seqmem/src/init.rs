//! Initialization schemes: transplanting a fitted autoencoder into a
//! trainable network, the random-orthogonal baseline, and the linear
//! readout trained on autoencoder states.
//!
//! The autoencoder inits put the closed-form memory directly into the
//! recurrent weights. For the Elman RNN the whole recurrence is wrapped
//! in the tanh (`h^t = tanh(A x^t + B h^{t-1})`), so the transplant is
//! exact only in the small-signal regime. The LMN keeps its memory
//! update linear, so only the *input* transformation passes through the
//! nonlinearity — the initialized LMN computes
//! `m^t = B m^{t-1} + tanh(A x^t)` exactly, which is why it tracks the
//! linear model so much more closely.

use crate::laes::LaesModel;
use crate::models::{LinearRnnParams, LmnParams, LstmParams, RnnParams};
use crate::numerics::{least_squares_fit, random_orthogonal, Matrix, NumericsError, SplitMix64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("readout has {got} columns, autoencoder state size is {expected}")]
    ReadoutMismatch { expected: usize, got: usize },
    #[error("labels: expected {expected} entries, got {got}")]
    LabelCountMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("degenerate label set: fewer than two distinct classes")]
    DegenerateLabels,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `V = A`, `U = B`: the RNN whose tanh-linearization is the fitted
/// autoencoder.
pub fn init_rnn_from_laes(laes: &LaesModel, readout: &Matrix) -> Result<RnnParams, InitError> {
    if readout.cols() != laes.p {
        return Err(InitError::ReadoutMismatch { expected: laes.p, got: readout.cols() });
    }
    Ok(RnnParams { v: laes.a.clone(), u: laes.b.clone(), w_o: readout.clone() })
}

/// `W_xh = A`, `W_mh = 0`, `W_hm = I`, `W_mm = B`: the LMN whose memory
/// follows `m^t = B m^{t-1} + tanh(A x^t)` exactly.
pub fn init_lmn_from_laes(laes: &LaesModel, readout: &Matrix) -> Result<LmnParams, InitError> {
    if readout.cols() != laes.p {
        return Err(InitError::ReadoutMismatch { expected: laes.p, got: readout.cols() });
    }
    let p = laes.p;
    Ok(LmnParams {
        w_xh: laes.a.clone(),
        w_mh: Matrix::zeros(p, p),
        w_hm: Matrix::identity(p),
        w_mm: laes.b.clone(),
        w_o: readout.clone(),
    })
}

/// Uniform fan-in entries in [-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn fan_in_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.next_uniform(bound))
}

/// Orthogonal recurrence, fan-in everything else; deterministic per seed.
pub fn init_orthogonal_rnn(p: usize, d: usize, c: usize, seed: u64) -> RnnParams {
    let u = random_orthogonal(p, SplitMix64::derive(seed, 1).next_u64())
        .expect("p >= 1 checked by caller");
    let mut rng = SplitMix64::derive(seed, 2);
    RnnParams {
        v: fan_in_matrix(p, d, &mut rng),
        u,
        w_o: fan_in_matrix(c, p, &mut rng),
    }
}

/// Orthogonal state transition, fan-in input and readout.
pub fn init_orthogonal_linear_rnn(p: usize, d: usize, c: usize, seed: u64) -> LinearRnnParams {
    let b = random_orthogonal(p, SplitMix64::derive(seed, 1).next_u64())
        .expect("p >= 1 checked by caller");
    let mut rng = SplitMix64::derive(seed, 2);
    LinearRnnParams {
        a: fan_in_matrix(p, d, &mut rng),
        b,
        w_o: fan_in_matrix(c, p, &mut rng),
    }
}

/// Fan-in uniform gate weights with the customary forget-gate bias of
/// 1.0; the LSTM has no single recurrent matrix to orthogonalize.
pub fn init_lstm(p: usize, d: usize, c: usize, seed: u64) -> LstmParams {
    let mut rng = SplitMix64::derive(seed, 2);
    let mut params = LstmParams::zeros(p, d, c);
    params.w_i = fan_in_matrix(p, d + p, &mut rng);
    params.w_f = fan_in_matrix(p, d + p, &mut rng);
    params.w_c = fan_in_matrix(p, d + p, &mut rng);
    params.w_og = fan_in_matrix(p, d + p, &mut rng);
    params.w_o = fan_in_matrix(c, p, &mut rng);
    params
}

/// Orthogonal memory-to-memory matrix, fan-in everything else.
pub fn init_orthogonal_lmn(p_h: usize, p_m: usize, d: usize, c: usize, seed: u64) -> LmnParams {
    let w_mm = random_orthogonal(p_m, SplitMix64::derive(seed, 1).next_u64())
        .expect("p_m >= 1 checked by caller");
    let mut rng = SplitMix64::derive(seed, 2);
    LmnParams {
        w_xh: fan_in_matrix(p_h, d, &mut rng),
        w_mh: fan_in_matrix(p_h, p_m, &mut rng),
        w_hm: fan_in_matrix(p_m, p_h, &mut rng),
        w_mm,
        w_o: fan_in_matrix(c, p_m, &mut rng),
    }
}

/// Ridge-regularized least squares from states to one-hot labels;
/// returns the readout `W_o` (classes x p).
pub fn fit_linear_head(
    states: &Matrix,
    labels: &[usize],
    classes: usize,
    ridge: f64,
) -> Result<Matrix, InitError> {
    if labels.len() != states.rows() {
        return Err(InitError::LabelCountMismatch { expected: states.rows(), got: labels.len() });
    }
    for &label in labels {
        if label >= classes {
            return Err(InitError::LabelOutOfRange { label, classes });
        }
    }
    let mut seen = vec![false; classes];
    for &label in labels {
        seen[label] = true;
    }
    if seen.iter().filter(|s| **s).count() < 2 && labels.len() > 1 {
        return Err(InitError::DegenerateLabels);
    }
    let mut targets = Matrix::zeros(states.rows(), classes);
    for (i, &label) in labels.iter().enumerate() {
        *targets.at_mut(i, label) = 1.0;
    }
    let w = least_squares_fit(states, &targets, ridge)?;
    Ok(w.transposed())
}

/// Fraction of rows whose argmax readout matches the label.
pub fn head_accuracy(readout: &Matrix, states: &Matrix, labels: &[usize]) -> f64 {
    let logits = states.matmul(&readout.transposed());
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len().max(1) as f64
}
