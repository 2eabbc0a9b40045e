//! Measurement apparatus: gradient propagation curves, per-lag linear
//! reconstruction probes, image reconstruction, and the BPTT-trained
//! encoder-decoder baseline the reconstruction comparison needs.

mod reconstruction;

pub use reconstruction::{
    init_reconstruction_lstm, init_reconstruction_rnn, recon_loss_and_grads, reconstruct_sequence,
    reconstruction_loss, reconstruction_trainer, ReconCell, ReconstructionModel,
};

use crate::laes::{laes_decode_unroll, laes_encode, LaesError, LaesModel, SequenceBatch};
use crate::models::{steps_from_batch, ModelError};
use crate::numerics::{least_squares_fit, Matrix, NumericsError, SplitMix64};
use crate::training::{bptt_backward, softmax_cross_entropy, ModelParams, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("no sequences to probe")]
    EmptyInput,
    #[error("lag {lag} is not below the shortest sequence length {min_len}")]
    LagTooLarge { lag: usize, min_len: usize },
    #[error("states/inputs disagree: {context}")]
    ShapeMismatch { context: String },
    #[error("sequence has {got} steps but a {side}x{side} image needs {expected}")]
    PixelCountMismatch { got: usize, expected: usize, side: usize },
    #[error(transparent)]
    Laes(#[from] LaesError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Mean-over-batch gradient norm at every timestep, `norms[t]` holding
/// `||dE/dstate^t||` for `t = 0..=T` (0 is the initial state).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCurve {
    pub norms: Vec<f64>,
}

impl GradientCurve {
    /// Steps covered, not counting the initial state.
    pub fn t_max(&self) -> usize {
        self.norms.len().saturating_sub(1)
    }

    /// CSV rows from t = T down to 0 under the fixed header
    /// `t,grad_norm`. `stride > 1` keeps every stride-th row counted
    /// from the end of the sequence, plus always the t=0 row.
    pub fn to_csv(&self, stride: usize) -> String {
        let stride = stride.max(1);
        let t_max = self.t_max();
        let mut out = String::from("t,grad_norm\n");
        for (t, norm) in self.norms.iter().enumerate().rev() {
            if (t_max - t) % stride == 0 || t == 0 {
                out.push_str(&format!("{},{:.9e}\n", t, norm));
            }
        }
        out
    }
}

/// Backpropagates a cross-entropy error injected only at the final
/// timestep and records the mean gradient norm at the probed state for
/// every t. The probed state is the memory for LMN and linear RNN, the
/// hidden state for RNN and LSTM.
///
/// The injected error is the batch-mean softmax cross-entropy gradient
/// against class 0 — any fixed nonzero final-step error measures the
/// same Jacobian products; cross-entropy keeps the scale realistic.
pub fn gradient_through_time(
    params: &ModelParams,
    batch: &SequenceBatch,
    trunc_p: f64,
    seed: u64,
) -> Result<GradientCurve, DiagnosticsError> {
    if batch.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let seqs: Vec<&Matrix> = batch.iter().collect();
    let steps = steps_from_batch(&seqs)?;
    let trace = params.forward(&steps)?;
    let labels = vec![0usize; batch.len()];
    let (_, dlogits) = softmax_cross_entropy(trace.logits(), &labels);
    let mut rng = SplitMix64::derive(seed, 1);
    let result = bptt_backward(params, &trace, &steps, &dlogits, 0.0, trunc_p, &mut rng);
    Ok(GradientCurve { norms: result.state_grad_norms })
}

/// Probe lags used by the reconstruction-error experiment when a config
/// does not name its own: a sweep between the endpoints k=1 and k=300.
pub const DEFAULT_PROBE_LAGS: [usize; 8] = [1, 5, 10, 25, 50, 100, 200, 300];

#[derive(Clone, Debug, PartialEq)]
pub struct LagProbeResult {
    pub lag: usize,
    pub mse: f64,
}

/// For each lag k, fits a ridge regression from every state `h^t` to the
/// input `x^{t-k}` and reports held-out per-element MSE.
///
/// `states[s]` holds all T states of sequence s (row t-1 = state after
/// step t); `inputs[s]` the matching T×d input. The hold-out is the last
/// 20% of sequences (at least one when there are two or more); a single
/// sequence is split 80/20 along time instead.
pub fn lag_reconstruction_probe(
    states: &[Matrix],
    inputs: &[Matrix],
    lags: &[usize],
    ridge: f64,
) -> Result<Vec<LagProbeResult>, DiagnosticsError> {
    if states.is_empty() || inputs.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    if states.len() != inputs.len() {
        return Err(DiagnosticsError::ShapeMismatch {
            context: format!("{} state sequences vs {} input sequences", states.len(), inputs.len()),
        });
    }
    for (i, (h, x)) in states.iter().zip(inputs).enumerate() {
        if h.rows() != x.rows() {
            return Err(DiagnosticsError::ShapeMismatch {
                context: format!("sequence {i}: {} states vs {} inputs", h.rows(), x.rows()),
            });
        }
    }
    let min_len = inputs.iter().map(|x| x.rows()).min().unwrap();
    let p = states[0].cols();
    let d = inputs[0].cols();
    let mut results = Vec::with_capacity(lags.len());
    for &lag in lags {
        if lag >= min_len {
            return Err(DiagnosticsError::LagTooLarge { lag, min_len });
        }
        let mut train_h: Vec<Vec<f64>> = Vec::new();
        let mut train_x: Vec<Vec<f64>> = Vec::new();
        let mut test_h: Vec<Vec<f64>> = Vec::new();
        let mut test_x: Vec<Vec<f64>> = Vec::new();
        let single = states.len() == 1;
        let train_seqs = if single {
            1
        } else {
            (states.len() * 4).div_ceil(5).min(states.len() - 1)
        };
        for (s, (h, x)) in states.iter().zip(inputs).enumerate() {
            let t_len = h.rows();
            // 0-based: state index i pairs with input index i - lag
            let cut = if single { ((t_len - lag) * 4) / 5 } else { usize::MAX };
            for (count, i) in (lag..t_len).enumerate() {
                let held_out = if single { count >= cut } else { s >= train_seqs };
                let (hs, xs) = if held_out {
                    (&mut test_h, &mut test_x)
                } else {
                    (&mut train_h, &mut train_x)
                };
                hs.push(h.row(i).to_vec());
                xs.push(x.row(i - lag).to_vec());
            }
        }
        if train_h.is_empty() || test_h.is_empty() {
            return Err(DiagnosticsError::ShapeMismatch {
                context: format!("lag {lag}: not enough (state, input) pairs to split"),
            });
        }
        let h_mat = Matrix::from_rows(&train_h);
        let x_mat = Matrix::from_rows(&train_x);
        let w = least_squares_fit(&h_mat, &x_mat, ridge)?; // p x d
        debug_assert_eq!((w.rows(), w.cols()), (p, d));
        let mut err = 0.0;
        for (h, x) in test_h.iter().zip(&test_x) {
            let pred = w.matvec_t(h);
            for (pv, xv) in pred.iter().zip(x) {
                err += (pv - xv) * (pv - xv);
            }
        }
        results.push(LagProbeResult { lag, mse: err / (test_h.len() * d) as f64 });
    }
    Ok(results)
}

/// CSV under the fixed header `k,mse,model_tag`.
pub fn lag_probe_csv(results: &[LagProbeResult], model_tag: &str) -> String {
    let mut out = String::from("k,mse,model_tag\n");
    for r in results {
        out.push_str(&format!("{},{:.9e},{}\n", r.lag, r.mse, model_tag));
    }
    out
}

/// Reassembles a decoded (reversed-order) pixel stream into a
/// `side x side` image: decode step k approximates input `x^{T-k}`
/// (0-based), so the stream is flipped back to forward pixel order.
pub fn image_from_reversed_stream(
    stream: &Matrix,
    side: usize,
) -> Result<Matrix, DiagnosticsError> {
    let t = stream.rows();
    if t != side * side || stream.cols() != 1 {
        return Err(DiagnosticsError::PixelCountMismatch { got: t, expected: side * side, side });
    }
    Ok(Matrix::from_fn(side, side, |r, c| stream.at(t - 1 - (r * side + c), 0)))
}

/// Encodes a pixel sequence with a LAES, unrolls the decoder for the
/// full length, and reassembles the image.
pub fn image_reconstruction_laes(
    model: &LaesModel,
    image_seq: &Matrix,
    side: usize,
) -> Result<Matrix, DiagnosticsError> {
    let t = image_seq.rows();
    if t != side * side {
        return Err(DiagnosticsError::PixelCountMismatch { got: t, expected: side * side, side });
    }
    let states = laes_encode(model, image_seq)?;
    let stream = laes_decode_unroll(model, states.row(t - 1), t)?;
    image_from_reversed_stream(&stream, side)
}

/// Encodes with a trained encoder-decoder model and reassembles.
pub fn image_reconstruction_trained(
    model: &ReconstructionModel,
    image_seq: &Matrix,
    side: usize,
) -> Result<Matrix, DiagnosticsError> {
    let t = image_seq.rows();
    if t != side * side {
        return Err(DiagnosticsError::PixelCountMismatch { got: t, expected: side * side, side });
    }
    let stream = reconstruct_sequence(model, image_seq)?;
    image_from_reversed_stream(&stream, side)
}

/// Mean absolute per-pixel difference between two equally sized images.
pub fn per_pixel_mae(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let n = a.as_slice().len().max(1);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n as f64
}

/// Binary PGM (P5, maxval 255); values clamped from [0,1].
pub fn pgm_bytes(image: &Matrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    for &v in image.as_slice() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

pub fn write_pgm(path: &std::path::Path, image: &Matrix) -> std::io::Result<()> {
    std::fs::write(path, pgm_bytes(image))
}
