//! BPTT-trained sequence autoencoder: an encoder whose final state
//! seeds a decoder sharing the same recurrent cell, fed zero inputs and
//! emitting reconstructions through a linear output layer. The target
//! is the reversed input sequence, matching the closed-form decoder's
//! output order, and the loss is per-element MSE.

use crate::laes::SequenceBatch;
use crate::models::ModelError;
use crate::numerics::{Matrix, SplitMix64};
use crate::training::{adam_step_mats, AdamState, TrainConfig, TrainError};

/// Recurrent cell shared by the encoder and decoder halves.
#[derive(Clone, Debug, PartialEq)]
pub enum ReconCell {
    Rnn {
        v: Matrix, // p x d
        u: Matrix, // p x p
    },
    Lstm {
        w_i: Matrix, // p x (d+p)
        w_f: Matrix,
        w_c: Matrix,
        w_og: Matrix,
        b_i: Matrix, // 1 x p
        b_f: Matrix,
        b_c: Matrix,
        b_og: Matrix,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionModel {
    pub cell: ReconCell,
    pub w_out: Matrix, // d x p
}

impl ReconstructionModel {
    pub fn p(&self) -> usize {
        match &self.cell {
            ReconCell::Rnn { u, .. } => u.rows(),
            ReconCell::Lstm { w_i, .. } => w_i.rows(),
        }
    }

    pub fn d(&self) -> usize {
        match &self.cell {
            ReconCell::Rnn { v, .. } => v.cols(),
            ReconCell::Lstm { w_i, .. } => w_i.cols() - w_i.rows(),
        }
    }

    pub fn mats(&self) -> Vec<&Matrix> {
        match &self.cell {
            ReconCell::Rnn { v, u } => vec![v, u, &self.w_out],
            ReconCell::Lstm { w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og } => {
                vec![w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og, &self.w_out]
            }
        }
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.cell {
            ReconCell::Rnn { v, u } => vec![v, u, &mut self.w_out],
            ReconCell::Lstm { w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og } => {
                vec![w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og, &mut self.w_out]
            }
        }
    }

    fn zero_grads(&self) -> Vec<Matrix> {
        self.mats().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect()
    }
}

fn fan_in(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    let bound = if cols > 0 { 1.0 / (cols as f64).sqrt() } else { 0.0 };
    Matrix::from_fn(rows, cols, |_, _| rng.next_uniform(bound))
}

/// Tanh-cell autoencoder; `orthogonal` draws the recurrence from the
/// orthogonal group instead of the fan-in cube.
pub fn init_reconstruction_rnn(
    p: usize,
    d: usize,
    seed: u64,
    orthogonal: bool,
) -> ReconstructionModel {
    let u = if orthogonal {
        crate::numerics::random_orthogonal(p, SplitMix64::derive(seed, 1).next_u64())
            .expect("p >= 1")
    } else {
        let mut rng = SplitMix64::derive(seed, 1);
        fan_in(p, p, &mut rng)
    };
    let mut rng = SplitMix64::derive(seed, 2);
    ReconstructionModel {
        cell: ReconCell::Rnn { v: fan_in(p, d, &mut rng), u },
        w_out: fan_in(d, p, &mut rng),
    }
}

/// LSTM-cell autoencoder with the customary forget bias of 1.0.
pub fn init_reconstruction_lstm(p: usize, d: usize, seed: u64) -> ReconstructionModel {
    let mut rng = SplitMix64::derive(seed, 2);
    ReconstructionModel {
        cell: ReconCell::Lstm {
            w_i: fan_in(p, d + p, &mut rng),
            w_f: fan_in(p, d + p, &mut rng),
            w_c: fan_in(p, d + p, &mut rng),
            w_og: fan_in(p, d + p, &mut rng),
            b_i: Matrix::zeros(1, p),
            b_f: Matrix::from_fn(1, p, |_, _| 1.0),
            b_c: Matrix::zeros(1, p),
            b_og: Matrix::zeros(1, p),
        },
        w_out: fan_in(d, p, &mut rng),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from the 2T-step unroll.
struct UnrollTrace {
    hidden: Vec<Matrix>,            // 2T states
    cell: Vec<Matrix>,              // LSTM only
    gates: Vec<[Matrix; 4]>,        // LSTM only: i, f, g, o
    preds: Vec<Matrix>,             // T decoder outputs, n x d
}

/// Runs encoder (real inputs) then decoder (zero inputs) with the
/// shared cell; LSTM cell state rolls straight through the boundary.
fn unroll(model: &ReconstructionModel, steps: &[Matrix]) -> UnrollTrace {
    let t_len = steps.len();
    let n = steps[0].rows();
    let p = model.p();
    let d = model.d();
    let zero_input = Matrix::zeros(n, d);
    let mut hidden = Vec::with_capacity(2 * t_len);
    let mut cell_states = Vec::new();
    let mut gates = Vec::new();
    let mut preds = Vec::with_capacity(t_len);
    match &model.cell {
        ReconCell::Rnn { v, u } => {
            let v_t = v.transposed();
            let u_t = u.transposed();
            let mut h = Matrix::zeros(n, p);
            for s in 0..2 * t_len {
                let x = if s < t_len { &steps[s] } else { &zero_input };
                let mut z = x.matmul(&v_t);
                z.add_scaled(&h.matmul(&u_t), 1.0);
                h = z.map(f64::tanh);
                hidden.push(h.clone());
                if s >= t_len {
                    preds.push(h.matmul(&model.w_out.transposed()));
                }
            }
        }
        ReconCell::Lstm { w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og } => {
            let wt = [w_i.transposed(), w_f.transposed(), w_c.transposed(), w_og.transposed()];
            let biases = [b_i, b_f, b_c, b_og];
            let mut h = Matrix::zeros(n, p);
            let mut c = Matrix::zeros(n, p);
            for s in 0..2 * t_len {
                let x = if s < t_len { &steps[s] } else { &zero_input };
                let mut xh = Matrix::zeros(n, d + p);
                for i in 0..n {
                    xh.row_mut(i)[..d].copy_from_slice(x.row(i));
                    xh.row_mut(i)[d..].copy_from_slice(h.row(i));
                }
                let mut z: Vec<Matrix> = wt.iter().map(|w| xh.matmul(w)).collect();
                for (zg, b) in z.iter_mut().zip(biases) {
                    for i in 0..n {
                        for (v, &bv) in zg.row_mut(i).iter_mut().zip(b.row(0)) {
                            *v += bv;
                        }
                    }
                }
                let gi = z[0].map(sigmoid);
                let gf = z[1].map(sigmoid);
                let gg = z[2].map(f64::tanh);
                let go = z[3].map(sigmoid);
                let mut new_c = Matrix::zeros(n, p);
                for idx in 0..n * p {
                    new_c.as_mut_slice()[idx] = gf.as_slice()[idx] * c.as_slice()[idx]
                        + gi.as_slice()[idx] * gg.as_slice()[idx];
                }
                let mut new_h = Matrix::zeros(n, p);
                for idx in 0..n * p {
                    new_h.as_mut_slice()[idx] = go.as_slice()[idx] * new_c.as_slice()[idx].tanh();
                }
                c = new_c;
                h = new_h;
                hidden.push(h.clone());
                cell_states.push(c.clone());
                gates.push([gi, gf, gg, go]);
                if s >= t_len {
                    preds.push(h.matmul(&model.w_out.transposed()));
                }
            }
        }
    }
    UnrollTrace { hidden, cell: cell_states, gates, preds }
}

/// Per-element MSE of the decoder outputs against the reversed inputs:
/// decoder step k (0-based) is scored against `steps[T-1-k]`.
pub fn reconstruction_loss(model: &ReconstructionModel, steps: &[Matrix]) -> f64 {
    let trace = unroll(model, steps);
    loss_from_trace(&trace, steps)
}

fn loss_from_trace(trace: &UnrollTrace, steps: &[Matrix]) -> f64 {
    let t_len = steps.len();
    let n = steps[0].rows();
    let d = steps[0].cols();
    let mut loss = 0.0;
    for (k, pred) in trace.preds.iter().enumerate() {
        let target = &steps[t_len - 1 - k];
        for (pv, xv) in pred.as_slice().iter().zip(target.as_slice()) {
            loss += (pv - xv) * (pv - xv);
        }
    }
    loss / (n * t_len * d) as f64
}

/// Loss and exact gradients (in `mats()` order) of the full 2T-step
/// unroll. Plain BPTT — the reconstruction experiment uses no
/// truncation or penalties.
pub fn recon_loss_and_grads(
    model: &ReconstructionModel,
    steps: &[Matrix],
) -> (f64, Vec<Matrix>) {
    let t_len = steps.len();
    let n = steps[0].rows();
    let p = model.p();
    let d = model.d();
    let trace = unroll(model, steps);
    let loss = loss_from_trace(&trace, steps);
    let mut grads = model.zero_grads();
    let scale = 2.0 / (n * t_len * d) as f64;
    let zero_input = Matrix::zeros(n, d);
    match &model.cell {
        ReconCell::Rnn { u, .. } => {
            let mut dh = Matrix::zeros(n, p);
            for s in (0..2 * t_len).rev() {
                if s >= t_len {
                    let k = s - t_len;
                    let mut dpred = trace.preds[k].clone();
                    dpred.add_scaled(&steps[t_len - 1 - k], -1.0);
                    dpred.scale_in_place(scale);
                    grads[2].add_scaled(&dpred.matmul_tn(&trace.hidden[s]), 1.0);
                    dh.add_scaled(&dpred.matmul(&model.w_out), 1.0);
                }
                let mut dz = dh.clone();
                for (zv, &hv) in dz.as_mut_slice().iter_mut().zip(trace.hidden[s].as_slice()) {
                    *zv *= 1.0 - hv * hv;
                }
                if s < t_len {
                    grads[0].add_scaled(&dz.matmul_tn(&steps[s]), 1.0);
                }
                if s > 0 {
                    grads[1].add_scaled(&dz.matmul_tn(&trace.hidden[s - 1]), 1.0);
                }
                dh = dz.matmul(u);
            }
        }
        ReconCell::Lstm { w_i, w_f, w_c, w_og, .. } => {
            let zero_state = Matrix::zeros(n, p);
            let mut dh = Matrix::zeros(n, p);
            let mut dc = Matrix::zeros(n, p);
            for s in (0..2 * t_len).rev() {
                if s >= t_len {
                    let k = s - t_len;
                    let mut dpred = trace.preds[k].clone();
                    dpred.add_scaled(&steps[t_len - 1 - k], -1.0);
                    dpred.scale_in_place(scale);
                    grads[8].add_scaled(&dpred.matmul_tn(&trace.hidden[s]), 1.0);
                    dh.add_scaled(&dpred.matmul(&model.w_out), 1.0);
                }
                let [gi, gf, gg, go] = &trace.gates[s];
                let c_s = &trace.cell[s];
                let c_prev = if s > 0 { &trace.cell[s - 1] } else { &zero_state };
                let h_prev = if s > 0 { &trace.hidden[s - 1] } else { &zero_state };
                let x = if s < t_len { &steps[s] } else { &zero_input };
                let mut dzo = Matrix::zeros(n, p);
                for idx in 0..n * p {
                    let tc = c_s.as_slice()[idx].tanh();
                    let ov = go.as_slice()[idx];
                    let dhv = dh.as_slice()[idx];
                    dzo.as_mut_slice()[idx] = dhv * tc * ov * (1.0 - ov);
                    dc.as_mut_slice()[idx] += dhv * ov * (1.0 - tc * tc);
                }
                let mut dzi = Matrix::zeros(n, p);
                let mut dzf = Matrix::zeros(n, p);
                let mut dzg = Matrix::zeros(n, p);
                for idx in 0..n * p {
                    let dcv = dc.as_slice()[idx];
                    let iv = gi.as_slice()[idx];
                    let fv = gf.as_slice()[idx];
                    let gv = gg.as_slice()[idx];
                    dzi.as_mut_slice()[idx] = dcv * gv * iv * (1.0 - iv);
                    dzf.as_mut_slice()[idx] = dcv * c_prev.as_slice()[idx] * fv * (1.0 - fv);
                    dzg.as_mut_slice()[idx] = dcv * iv * (1.0 - gv * gv);
                }
                let mut xh = Matrix::zeros(n, d + p);
                for i in 0..n {
                    xh.row_mut(i)[..d].copy_from_slice(x.row(i));
                    xh.row_mut(i)[d..].copy_from_slice(h_prev.row(i));
                }
                for (gi_idx, dz) in [&dzi, &dzf, &dzg, &dzo].into_iter().enumerate() {
                    grads[gi_idx].add_scaled(&dz.matmul_tn(&xh), 1.0);
                    for i in 0..n {
                        for (gv, &dv) in grads[4 + gi_idx].row_mut(0).iter_mut().zip(dz.row(i)) {
                            *gv += dv;
                        }
                    }
                }
                let mut dxh = dzi.matmul(w_i);
                dxh.add_scaled(&dzf.matmul(w_f), 1.0);
                dxh.add_scaled(&dzg.matmul(w_c), 1.0);
                dxh.add_scaled(&dzo.matmul(w_og), 1.0);
                let mut dh_prev = Matrix::zeros(n, p);
                for i in 0..n {
                    dh_prev.row_mut(i).copy_from_slice(&dxh.row(i)[d..]);
                }
                dh = dh_prev;
                for idx in 0..n * p {
                    dc.as_mut_slice()[idx] *= gf.as_slice()[idx];
                }
            }
        }
    }
    (loss, grads)
}

/// Encodes one sequence and returns the decoded stream (T x d, reversed
/// order: row k approximates input `x^{T-k}` 1-based).
pub fn reconstruct_sequence(
    model: &ReconstructionModel,
    seq: &Matrix,
) -> Result<Matrix, ModelError> {
    if seq.rows() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if seq.cols() != model.d() {
        return Err(ModelError::DimensionMismatch {
            context: "reconstruct_sequence input width",
            expected: model.d(),
            got: seq.cols(),
        });
    }
    let steps: Vec<Matrix> = (0..seq.rows())
        .map(|t| Matrix::from_fn(1, seq.cols(), |_, j| seq.at(t, j)))
        .collect();
    let trace = unroll(model, &steps);
    let mut out = Matrix::zeros(seq.rows(), seq.cols());
    for (k, pred) in trace.preds.iter().enumerate() {
        out.row_mut(k).copy_from_slice(pred.row(0));
    }
    Ok(out)
}

/// Minibatch Adam over the reconstruction objective; returns the
/// trained model and the per-epoch mean training loss.
pub fn reconstruction_trainer(
    init: ReconstructionModel,
    data: &SequenceBatch,
    config: &TrainConfig,
) -> Result<(ReconstructionModel, Vec<f64>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = init;
    let mut adam = AdamState::for_mats(
        &model.mats(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut shuffle_rng = SplitMix64::derive(config.seed, 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let seqs: Vec<&Matrix> = chunk.iter().map(|&i| data.sequence(i)).collect();
            let steps = crate::models::steps_from_batch(&seqs)?;
            let (loss, mut grads) = recon_loss_and_grads(&model, &steps);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            let total: f64 = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
            if total > crate::training::GRAD_CLIP {
                let s = crate::training::GRAD_CLIP / total;
                for g in grads.iter_mut() {
                    g.scale_in_place(s);
                }
            }
            let grad_refs: Vec<&Matrix> = grads.iter().collect();
            adam_step_mats(model.mats_mut(), &grad_refs, &mut adam, config.lr);
            loss_sum += loss;
            batches += 1;
        }
        history.push(loss_sum / batches.max(1) as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_steps(t: usize, n: usize, d: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = SplitMix64::new(seed);
        (0..t).map(|_| Matrix::from_fn(n, d, |_, _| rng.next_normal())).collect()
    }

    fn toy_batch(count: usize, t: usize, d: usize, seed: u64) -> SequenceBatch {
        let mut rng = SplitMix64::new(seed);
        SequenceBatch::new(
            (0..count).map(|_| Matrix::from_fn(t, d, |_, _| rng.next_normal())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences_both_cells() {
        let steps = toy_steps(6, 3, 2, 71);
        for (label, mut model) in [
            ("rnn", init_reconstruction_rnn(4, 2, 5, false)),
            ("lstm", init_reconstruction_lstm(4, 2, 6)),
        ] {
            let (_, grads) = recon_loss_and_grads(&model, &steps);
            let eps = 1e-6;
            for mi in 0..grads.len() {
                for idx in 0..grads[mi].as_slice().len() {
                    let orig = model.mats()[mi].as_slice()[idx];
                    model.mats_mut()[mi].as_mut_slice()[idx] = orig + eps;
                    let up = reconstruction_loss(&model, &steps);
                    model.mats_mut()[mi].as_mut_slice()[idx] = orig - eps;
                    let down = reconstruction_loss(&model, &steps);
                    model.mats_mut()[mi].as_mut_slice()[idx] = orig;
                    let fd = (up - down) / (2.0 * eps);
                    let an = grads[mi].as_slice()[idx];
                    let rel = (fd - an).abs() / fd.abs().max(1e-5);
                    assert!(rel <= 1e-4, "{label} mat {mi} entry {idx}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let data = toy_batch(6, 5, 1, 81);
        let init = init_reconstruction_rnn(6, 1, 7, true);
        let config = TrainConfig { epochs: 3, lr: 0.0, batch_size: 3, ..TrainConfig::default() };
        let (trained, _) = reconstruction_trainer(init.clone(), &data, &config).unwrap();
        assert_eq!(trained, init);
        // and the reconstructions therefore equal the untrained baseline
        let seq = data.sequence(0);
        assert_eq!(
            reconstruct_sequence(&trained, seq).unwrap(),
            reconstruct_sequence(&init, seq).unwrap()
        );
    }

    #[test]
    fn training_reduces_reconstruction_loss() {
        let data = toy_batch(8, 8, 1, 91);
        let init = init_reconstruction_rnn(12, 1, 9, false);
        let config =
            TrainConfig { epochs: 200, lr: 1e-2, batch_size: 8, ..TrainConfig::default() };
        let (_, history) = reconstruction_trainer(init, &data, &config).unwrap();
        let first = history[0];
        let last = *history.last().unwrap();
        assert!(last < 0.5 * first, "loss {first} -> {last}");
    }

    #[test]
    fn trainer_is_deterministic() {
        let data = toy_batch(5, 6, 2, 101);
        let config = TrainConfig { epochs: 5, lr: 1e-3, batch_size: 2, seed: 3, ..TrainConfig::default() };
        let run = || {
            let init = init_reconstruction_lstm(5, 2, 11);
            reconstruction_trainer(init, &data, &config).unwrap()
        };
        let (ma, ha) = run();
        let (mb, hb) = run();
        assert_eq!(ma, mb);
        assert_eq!(ha, hb);
    }

    #[test]
    fn reconstruct_sequence_shape_and_error_paths() {
        let model = init_reconstruction_rnn(4, 2, 13, false);
        let seq = Matrix::from_fn(7, 2, |i, j| (i + j) as f64 * 0.1);
        let out = reconstruct_sequence(&model, &seq).unwrap();
        assert_eq!((out.rows(), out.cols()), (7, 2));
        let bad = Matrix::zeros(7, 3);
        assert!(reconstruct_sequence(&model, &bad).is_err());
    }
}
