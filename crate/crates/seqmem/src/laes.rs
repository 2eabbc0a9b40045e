//! Linear Autoencoder for Sequences: closed-form fit via SVD of the
//! prefix matrix, plus encoding and unrolled decoding.
//!
//! The encoder is the linear recurrence `m^t = A x^t + B m^{t-1}` with
//! `m^0 = 0`. Collect every (reversed, zero-padded) input prefix as a row
//! of the matrix Xi; the rank-p truncated SVD `Xi ~ V S U^T` yields the
//! optimal rank-p encoder in closed form:
//!
//! ```text
//! A = U^T P        (P picks the first d coordinates)
//! B = U^T R U      (R shifts a prefix down by one input slot)
//! ```
//!
//! The decoder is *derived*, never trained or stored: `C = [A^T; B^T]`,
//! so `A^T m` estimates the current input and `B^T m` rewinds the memory
//! one step. When `p` covers the rank of Xi the round trip is exact and
//! the recurrence reproduces every training prefix to machine precision.

use crate::numerics::{truncated_svd, Matrix, NumericsError, SplitMix64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LaesError {
    #[error("sequence batch is empty")]
    EmptyBatch,
    #[error("sequence {index} has feature dimension {got}, batch uses {expected}")]
    FeatureDimMismatch { index: usize, expected: usize, got: usize },
    #[error("sequence {index} contains a non-finite value")]
    NonFiniteSequence { index: usize },
    #[error("sequence {index} has zero timesteps")]
    EmptySequence { index: usize },
    #[error("prefix stride must be at least 1")]
    ZeroStride,
    #[error("hidden size p = {p} exceeds prefix matrix width {max}")]
    HiddenTooLarge { p: usize, max: usize },
    #[error("input has dimension {got}, model expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A batch of variable-length sequences sharing one feature dimension.
///
/// Each sequence is a `T_i x d` matrix whose rows are the input vectors
/// `x^1 .. x^{T_i}`.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    sequences: Vec<Matrix>,
    dim: usize,
}

impl SequenceBatch {
    pub fn new(sequences: Vec<Matrix>) -> Result<Self, LaesError> {
        let first = sequences.first().ok_or(LaesError::EmptyBatch)?;
        let dim = first.cols();
        for (index, seq) in sequences.iter().enumerate() {
            if seq.cols() != dim {
                return Err(LaesError::FeatureDimMismatch {
                    index,
                    expected: dim,
                    got: seq.cols(),
                });
            }
            if seq.rows() == 0 {
                return Err(LaesError::EmptySequence { index });
            }
            if !seq.all_finite() {
                return Err(LaesError::NonFiniteSequence { index });
            }
        }
        Ok(Self { sequences, dim })
    }

    /// A batch holding no sequences but a known feature dimension
    /// (an empty validation set is legitimate).
    pub fn empty(dim: usize) -> Self {
        Self { sequences: Vec::new(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &Matrix {
        &self.sequences[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.sequences.iter()
    }

    pub fn max_len(&self) -> usize {
        self.sequences.iter().map(|s| s.rows()).max().unwrap_or(0)
    }

    /// Mean input vector over every timestep of every sequence.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        let mut count = 0usize;
        for seq in &self.sequences {
            for t in 0..seq.rows() {
                for (m, x) in mean.iter_mut().zip(seq.row(t)) {
                    *m += x;
                }
            }
            count += seq.rows();
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        mean
    }

    /// A copy with `mean` subtracted from every timestep.
    fn centered(&self, mean: &[f64]) -> SequenceBatch {
        let sequences = self
            .sequences
            .iter()
            .map(|seq| {
                Matrix::from_fn(seq.rows(), seq.cols(), |t, j| seq.at(t, j) - mean[j])
            })
            .collect();
        SequenceBatch { sequences, dim: self.dim }
    }
}

/// The fitted autoencoder: encoder matrices `a` (p x d) and `b` (p x p),
/// plus the training-set feature mean when the fit was centered.
///
/// The decoder `C = [A^T; B^T]` is always derived from the encoder — see
/// [`LaesModel::decoder`] — and is deliberately not a stored field.
#[derive(Clone, Debug, PartialEq)]
pub struct LaesModel {
    pub a: Matrix,
    pub b: Matrix,
    pub p: usize,
    pub d: usize,
    /// Feature mean subtracted before encoding and restored after
    /// decoding; `None` when the fit was not centered.
    pub mean: Option<Vec<f64>>,
}

impl LaesModel {
    /// The derived decoder `C = [A^T; B^T]`, shape (d+p) x p.
    pub fn decoder(&self) -> Matrix {
        let mut c = Matrix::zeros(self.d + self.p, self.p);
        for i in 0..self.p {
            for j in 0..self.d {
                *c.at_mut(j, i) = self.a.at(i, j);
            }
            for j in 0..self.p {
                *c.at_mut(self.d + j, i) = self.b.at(i, j);
            }
        }
        c
    }
}

/// Rows of the prefix matrix: for each selected prefix end `t`, the
/// reversed prefix `[x^t, x^{t-1}, .., x^1]` zero-padded to `T_max * d`
/// columns.
///
/// Prefix ends are every `prefix_stride`-th timestep plus always the
/// final timestep; if more than `max_prefixes` rows result they are
/// uniformly subsampled with the given seed (then re-sorted so the row
/// order is canonical).
pub fn build_prefix_matrix(
    batch: &SequenceBatch,
    prefix_stride: usize,
    max_prefixes: usize,
    seed: u64,
) -> Result<Matrix, LaesError> {
    if batch.is_empty() {
        return Err(LaesError::EmptyBatch);
    }
    if prefix_stride == 0 {
        return Err(LaesError::ZeroStride);
    }
    let d = batch.dim();
    let width = batch.max_len() * d;

    // Enumerate (sequence, prefix-end) pairs; prefix ends are 1-based.
    let mut ends: Vec<(usize, usize)> = Vec::new();
    for (i, seq) in batch.iter().enumerate() {
        let t_len = seq.rows();
        let mut t = prefix_stride;
        while t < t_len {
            ends.push((i, t));
            t += prefix_stride;
        }
        ends.push((i, t_len)); // the final timestep is always kept
    }
    if ends.len() > max_prefixes && max_prefixes > 0 {
        let mut rng = SplitMix64::derive(seed, 0x9ef1);
        rng.shuffle(&mut ends);
        ends.truncate(max_prefixes);
        ends.sort_unstable();
    }

    let mut xi = Matrix::zeros(ends.len(), width);
    for (row, &(i, t)) in ends.iter().enumerate() {
        let seq = batch.sequence(i);
        let out = xi.row_mut(row);
        for k in 0..t {
            // slot k holds x^{t-k}; timestep t-k is row t-k-1 (0-based)
            let src = seq.row(t - k - 1);
            out[k * d..(k + 1) * d].copy_from_slice(src);
        }
    }
    Ok(xi)
}

/// Closed-form fit: SVD of the prefix matrix, then `A = U^T P` and
/// `B = U^T R U`.
///
/// With `center` set, the training-set feature mean is removed before
/// building the prefix matrix and stored on the model; encoding and
/// decoding then apply it transparently.
pub fn fit_laes(
    batch: &SequenceBatch,
    p: usize,
    prefix_stride: usize,
    max_prefixes: usize,
    seed: u64,
    center: bool,
) -> Result<LaesModel, LaesError> {
    fit_laes_with_report(batch, p, prefix_stride, max_prefixes, seed, center).map(|(m, _)| m)
}

/// Fit diagnostics: the kept singular values, the prefix matrix's total
/// energy, and its numerical rank (relative tolerance 1e-12).
#[derive(Clone, Debug, PartialEq)]
pub struct LaesFitReport {
    pub singular_values: Vec<f64>,
    pub prefix_sq_norm: f64,
    pub rank_used: usize,
}

impl LaesFitReport {
    /// Energy outside the kept subspace, `||Xi||_F^2 - sum s_i^2`,
    /// clamped at zero against rounding. By the Eckart-Young theorem
    /// this is the least total reconstruction error any state of this
    /// size can achieve.
    pub fn tail_energy(&self) -> f64 {
        let kept: f64 = self.singular_values.iter().map(|s| s * s).sum();
        (self.prefix_sq_norm - kept).max(0.0)
    }
}

/// [`fit_laes`] plus a [`LaesFitReport`] from the same decomposition.
pub fn fit_laes_with_report(
    batch: &SequenceBatch,
    p: usize,
    prefix_stride: usize,
    max_prefixes: usize,
    seed: u64,
    center: bool,
) -> Result<(LaesModel, LaesFitReport), LaesError> {
    let d = batch.dim();
    let mean = if center { Some(batch.feature_mean()) } else { None };
    let work = match &mean {
        Some(m) => batch.centered(m),
        None => batch.clone(),
    };
    let xi = build_prefix_matrix(&work, prefix_stride, max_prefixes, seed)?;
    if p == 0 || p > xi.cols() {
        return Err(LaesError::HiddenTooLarge { p, max: xi.cols() });
    }
    // The SVD cannot return more triplets than min(rows, cols); if the
    // caller asks for more hidden units than there are prefix rows, the
    // extra directions carry zero singular value anyway, so fit at the
    // achievable rank and embed.
    let k = p.min(xi.rows());
    let svd = truncated_svd(&xi, k)?;
    let u = &svd.u; // width x k

    // A = U^T P: the first d rows of U, transposed.
    let mut a = Matrix::zeros(p, d);
    for i in 0..k {
        for j in 0..d {
            *a.at_mut(i, j) = u.at(j, i);
        }
    }
    // B = U^T (R U) with R the down-shift-by-d block matrix.
    let mut shifted = Matrix::zeros(u.rows(), k);
    for r in d..u.rows() {
        for c in 0..k {
            *shifted.at_mut(r, c) = u.at(r - d, c);
        }
    }
    let b_small = u.matmul_tn(&shifted); // k x k
    let mut b = Matrix::zeros(p, p);
    for i in 0..k {
        for j in 0..k {
            *b.at_mut(i, j) = b_small.at(i, j);
        }
    }
    let tol = svd.s.first().copied().unwrap_or(0.0) * 1e-12;
    let report = LaesFitReport {
        rank_used: svd.s.iter().filter(|&&s| s > tol).count(),
        singular_values: svd.s,
        prefix_sq_norm: xi.sum_squares(),
    };
    Ok((LaesModel { a, b, p, d, mean }, report))
}

/// All memory states `m^1 .. m^T` (one per row) for one sequence, from
/// `m^0 = 0`.
pub fn laes_encode(model: &LaesModel, seq: &Matrix) -> Result<Matrix, LaesError> {
    if seq.cols() != model.d {
        return Err(LaesError::InputDimMismatch { expected: model.d, got: seq.cols() });
    }
    let t_len = seq.rows();
    let mut states = Matrix::zeros(t_len, model.p);
    let mut m = vec![0.0; model.p];
    let mut x = vec![0.0; model.d];
    for t in 0..t_len {
        x.copy_from_slice(seq.row(t));
        if let Some(mean) = &model.mean {
            for (v, mu) in x.iter_mut().zip(mean) {
                *v -= mu;
            }
        }
        let ax = model.a.matvec(&x);
        let bm = model.b.matvec(&m);
        for (i, out) in m.iter_mut().enumerate() {
            *out = ax[i] + bm[i];
        }
        states.row_mut(t).copy_from_slice(&m);
    }
    Ok(states)
}

/// Final memory state `m^T` of every sequence in the batch, one per row.
///
/// Equal-length batches run in lockstep (two matrix products per step);
/// ragged batches fall back to per-sequence encoding.
pub fn laes_encode_final(model: &LaesModel, batch: &SequenceBatch) -> Result<Matrix, LaesError> {
    let n = batch.len();
    let t_max = batch.max_len();
    let uniform = batch.iter().all(|s| s.rows() == t_max);
    if !uniform {
        let mut out = Matrix::zeros(n, model.p);
        for (i, seq) in batch.iter().enumerate() {
            let states = laes_encode(model, seq)?;
            out.row_mut(i).copy_from_slice(states.row(states.rows() - 1));
        }
        return Ok(out);
    }
    if batch.dim() != model.d {
        return Err(LaesError::InputDimMismatch { expected: model.d, got: batch.dim() });
    }
    let a_t = model.a.transposed(); // d x p
    let b_t = model.b.transposed(); // p x p
    let mut m = Matrix::zeros(n, model.p);
    let mut x_t = Matrix::zeros(n, model.d);
    for t in 0..t_max {
        for (i, seq) in batch.iter().enumerate() {
            let row = seq.row(t);
            let dst = x_t.row_mut(i);
            dst.copy_from_slice(row);
            if let Some(mean) = &model.mean {
                for (v, mu) in dst.iter_mut().zip(mean) {
                    *v -= mu;
                }
            }
        }
        let mut next = x_t.matmul(&a_t);
        let mb = m.matmul(&b_t);
        next.add_scaled(&mb, 1.0);
        m = next;
    }
    Ok(m)
}

/// Unroll the derived decoder from a memory state: repeatedly apply
/// `C = [A^T; B^T]`, emitting `x~ = A^T m` and rewinding `m <- B^T m`.
/// Row `k` (0-based) estimates the input `k` steps before the state.
pub fn laes_decode_unroll(
    model: &LaesModel,
    state: &[f64],
    steps: usize,
) -> Result<Matrix, LaesError> {
    if state.len() != model.p {
        return Err(LaesError::InputDimMismatch { expected: model.p, got: state.len() });
    }
    let mut out = Matrix::zeros(steps, model.d);
    let mut m = state.to_vec();
    for k in 0..steps {
        let x = model.a.matvec_t(&m);
        let dst = out.row_mut(k);
        dst.copy_from_slice(&x);
        if let Some(mean) = &model.mean {
            for (v, mu) in dst.iter_mut().zip(mean) {
                *v += mu;
            }
        }
        if k + 1 < steps {
            m = model.b.matvec_t(&m);
        }
    }
    Ok(out)
}

/// Short-term memory error of the model on one sequence:
/// `E(x) = sum_k || dec^k(m^T) - x^{T-k} ||^2` over all lags `k < T`.
pub fn stm_error(model: &LaesModel, seq: &Matrix) -> Result<f64, LaesError> {
    let states = laes_encode(model, seq)?;
    let t_len = seq.rows();
    let decoded = laes_decode_unroll(model, states.row(t_len - 1), t_len)?;
    let mut err = 0.0;
    for k in 0..t_len {
        let target = seq.row(t_len - 1 - k);
        let got = decoded.row(k);
        for (g, x) in got.iter().zip(target) {
            let diff = g - x;
            err += diff * diff;
        }
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_from(rows: &[&[&[f64]]]) -> SequenceBatch {
        let seqs = rows
            .iter()
            .map(|seq| {
                Matrix::from_rows(&seq.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            })
            .collect();
        SequenceBatch::new(seqs).unwrap()
    }

    fn random_batch(n: usize, t: usize, d: usize, seed: u64) -> SequenceBatch {
        let mut rng = SplitMix64::new(seed);
        let seqs = (0..n)
            .map(|_| Matrix::from_fn(t, d, |_, _| rng.next_normal()))
            .collect();
        SequenceBatch::new(seqs).unwrap()
    }

    #[test]
    fn prefix_rows_unroll_definition() {
        // one sequence [x1, x2] with d=1 -> rows [[x1, 0], [x2, x1]]
        let batch = batch_from(&[&[&[3.0], &[5.0]]]);
        let xi = build_prefix_matrix(&batch, 1, usize::MAX, 0).unwrap();
        assert_eq!(xi.row(0), &[3.0, 0.0]);
        assert_eq!(xi.row(1), &[5.0, 3.0]);
    }

    #[test]
    fn stride_keeps_final_step() {
        let batch = batch_from(&[&[&[1.0], &[2.0], &[3.0], &[4.0]]]);
        let xi = build_prefix_matrix(&batch, 2, usize::MAX, 0).unwrap();
        assert_eq!(xi.rows(), 2); // prefix ends {2, 4}
        assert_eq!(xi.row(0), &[2.0, 1.0, 0.0, 0.0]);
        assert_eq!(xi.row(1), &[4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn subsampling_respects_cap_and_keeps_layout() {
        let batch = random_batch(8, 6, 2, 3);
        let xi = build_prefix_matrix(&batch, 1, 10, 7).unwrap();
        assert_eq!(xi.rows(), 10);
        assert_eq!(xi.cols(), 12);
        let again = build_prefix_matrix(&batch, 1, 10, 7).unwrap();
        assert_eq!(xi, again);
    }

    #[test]
    fn single_step_sequence_roundtrips_exactly() {
        let batch = batch_from(&[&[&[0.3, -1.2]]]);
        let model = fit_laes(&batch, 2, 1, usize::MAX, 0, false).unwrap();
        let states = laes_encode(&model, batch.sequence(0)).unwrap();
        let decoded = laes_decode_unroll(&model, states.row(0), 1).unwrap();
        assert!((decoded.at(0, 0) - 0.3).abs() < 1e-10);
        assert!((decoded.at(0, 1) + 1.2).abs() < 1e-10);
    }

    /// Unrolled reconstruction error summed over *every* prefix row:
    /// decode from the state at each prefix end, not just the final one.
    fn total_unrolled_error(model: &LaesModel, batch: &SequenceBatch) -> f64 {
        let mut total = 0.0;
        for seq in batch.iter() {
            let states = laes_encode(model, seq).unwrap();
            for t in 1..=seq.rows() {
                let decoded = laes_decode_unroll(model, states.row(t - 1), t).unwrap();
                for k in 0..t {
                    for j in 0..seq.cols() {
                        let diff = decoded.at(k, j) - seq.at(t - 1 - k, j);
                        total += diff * diff;
                    }
                }
            }
        }
        total
    }

    #[test]
    fn exact_rank_fit_reconstructs_all_prefixes() {
        let batch = random_batch(4, 3, 2, 11);
        let xi = build_prefix_matrix(&batch, 1, usize::MAX, 0).unwrap();
        let model = fit_laes(&batch, 6, 1, usize::MAX, 0, false).unwrap();
        let total = total_unrolled_error(&model, &batch);
        let budget = 1e-8 * xi.sum_squares();
        assert!(total <= budget, "total {total} > budget {budget}");
    }

    #[test]
    fn truncated_fit_obeys_eckart_young() {
        let batch = random_batch(4, 3, 2, 11);
        let xi = build_prefix_matrix(&batch, 1, usize::MAX, 0).unwrap();
        let full = truncated_svd(&xi, xi.rows().min(xi.cols())).unwrap();
        let tail: f64 = full.s.iter().skip(2).map(|s| s * s).sum();
        let model = fit_laes(&batch, 2, 1, usize::MAX, 0, false).unwrap();
        // The unrolled reconstruction of Xi is a rank-<=p linear image of
        // the states, so Eckart-Young lower-bounds its total error.
        let total = total_unrolled_error(&model, &batch);
        assert!(
            total >= tail - 1e-9,
            "rank-2 error {total} below Eckart-Young bound {tail}"
        );
    }

    #[test]
    fn encode_zero_sequence_is_zero() {
        let batch = random_batch(3, 4, 2, 5);
        let model = fit_laes(&batch, 4, 1, usize::MAX, 0, false).unwrap();
        let zeros = Matrix::zeros(6, 2);
        let states = laes_encode(&model, &zeros).unwrap();
        assert_eq!(states, Matrix::zeros(6, 4));
    }

    #[test]
    fn encode_single_step_is_ax() {
        let batch = random_batch(3, 4, 2, 6);
        let model = fit_laes(&batch, 4, 1, usize::MAX, 0, false).unwrap();
        let x = Matrix::from_rows(&[vec![0.7, -0.4]]);
        let states = laes_encode(&model, &x).unwrap();
        let ax = model.a.matvec(x.row(0));
        for i in 0..4 {
            assert!((states.at(0, i) - ax[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn stepwise_encode_matches_batch_encode() {
        let batch = random_batch(2, 5, 3, 7);
        let model = fit_laes(&batch, 6, 1, usize::MAX, 0, false).unwrap();
        let seq = batch.sequence(0);
        let states = laes_encode(&model, seq).unwrap();
        // re-encode one step at a time from the stored previous state
        let mut m = vec![0.0; model.p];
        for t in 0..seq.rows() {
            let ax = model.a.matvec(seq.row(t));
            let bm = model.b.matvec(&m);
            for i in 0..model.p {
                m[i] = ax[i] + bm[i];
            }
            for i in 0..model.p {
                assert!((states.at(t, i) - m[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decode_zero_state_is_zero() {
        let batch = random_batch(2, 3, 2, 8);
        let model = fit_laes(&batch, 4, 1, usize::MAX, 0, false).unwrap();
        let out = laes_decode_unroll(&model, &[0.0; 4], 5).unwrap();
        assert_eq!(out, Matrix::zeros(5, 2));
    }

    #[test]
    fn decode_recovers_reversed_inputs() {
        let batch = random_batch(4, 3, 2, 11);
        let model = fit_laes(&batch, 6, 1, usize::MAX, 0, false).unwrap();
        for seq in batch.iter() {
            let states = laes_encode(&model, seq).unwrap();
            let decoded = laes_decode_unroll(&model, states.row(2), 3).unwrap();
            for k in 0..3 {
                for j in 0..2 {
                    let want = seq.at(2 - k, j);
                    let got = decoded.at(k, j);
                    assert!((want - got).abs() < 1e-7, "lag {k} dim {j}: {want} vs {got}");
                }
            }
        }
    }

    #[test]
    fn stm_error_zero_decoder_sums_input_energy() {
        let batch = random_batch(1, 4, 2, 13);
        let seq = batch.sequence(0);
        let model = LaesModel {
            a: Matrix::zeros(3, 2),
            b: Matrix::zeros(3, 3),
            p: 3,
            d: 2,
            mean: None,
        };
        let err = stm_error(&model, seq).unwrap();
        assert!((err - seq.sum_squares()).abs() < 1e-12);
    }

    #[test]
    fn shift_structure_matches_encoder() {
        // m^T = sum_k B^k A x^{T-k} must agree with the recurrence.
        let batch = random_batch(3, 4, 2, 17);
        let model = fit_laes(&batch, 8, 1, usize::MAX, 0, false).unwrap();
        let seq = batch.sequence(1);
        let t_len = seq.rows();
        let states = laes_encode(&model, seq).unwrap();
        let mut omega_term = model.a.clone(); // B^0 A
        let mut m = vec![0.0; model.p];
        for k in 0..t_len {
            let contrib = omega_term.matvec(seq.row(t_len - 1 - k));
            for i in 0..model.p {
                m[i] += contrib[i];
            }
            omega_term = model.b.matmul(&omega_term);
        }
        for i in 0..model.p {
            assert!(
                (states.at(t_len - 1, i) - m[i]).abs() < 1e-9,
                "unit {i}: {} vs {}",
                states.at(t_len - 1, i),
                m[i]
            );
        }
    }

    #[test]
    fn scale_equivariance() {
        let batch = random_batch(3, 4, 2, 19);
        let model = fit_laes(&batch, 8, 1, usize::MAX, 0, false).unwrap();
        let seq = batch.sequence(0);
        let scaled = seq.scaled(3.5);
        let s1 = laes_encode(&model, seq).unwrap();
        let s2 = laes_encode(&model, &scaled).unwrap();
        assert!(s2.sub(&s1.scaled(3.5)).max_abs() < 1e-10);
        let d1 = laes_decode_unroll(&model, s1.row(3), 4).unwrap();
        let d2 = laes_decode_unroll(&model, s2.row(3), 4).unwrap();
        assert!(d2.sub(&d1.scaled(3.5)).max_abs() < 1e-10);
    }

    #[test]
    fn centered_fit_roundtrips_with_offset_data() {
        // Add a large constant offset; the centered fit must still
        // reconstruct the originals.
        let mut rng = SplitMix64::new(23);
        let seqs: Vec<Matrix> = (0..4)
            .map(|_| Matrix::from_fn(3, 2, |_, _| 100.0 + rng.next_normal()))
            .collect();
        let batch = SequenceBatch::new(seqs).unwrap();
        let model = fit_laes(&batch, 6, 1, usize::MAX, 0, true).unwrap();
        assert!(model.mean.is_some());
        for seq in batch.iter() {
            let err = stm_error(&model, seq).unwrap();
            assert!(err < 1e-6, "stm error {err}");
        }
    }

    #[test]
    fn final_state_batch_matches_per_sequence() {
        let batch = random_batch(5, 6, 3, 29);
        let model = fit_laes(&batch, 8, 1, usize::MAX, 0, false).unwrap();
        let finals = laes_encode_final(&model, &batch).unwrap();
        for (i, seq) in batch.iter().enumerate() {
            let states = laes_encode(&model, seq).unwrap();
            for j in 0..model.p {
                assert!((finals.at(i, j) - states.at(seq.rows() - 1, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ragged_batch_rejected_only_on_dim_mismatch() {
        let seqs = vec![Matrix::zeros(2, 2), Matrix::zeros(3, 3)];
        assert!(matches!(
            SequenceBatch::new(seqs),
            Err(LaesError::FeatureDimMismatch { .. })
        ));
        let ok = SequenceBatch::new(vec![Matrix::zeros(2, 2), Matrix::zeros(5, 2)]);
        assert!(ok.is_ok());
    }

    #[test]
    fn p_beyond_prefix_width_rejected() {
        let batch = batch_from(&[&[&[1.0], &[2.0]]]);
        assert!(matches!(
            fit_laes(&batch, 3, 1, usize::MAX, 0, false),
            Err(LaesError::HiddenTooLarge { .. })
        ));
    }
}
