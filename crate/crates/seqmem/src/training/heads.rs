//! Classifier heads fit on frozen encoder states: a one-vs-rest linear
//! SVM trained by Pegasos-style subgradient descent, and a
//! one-hidden-layer tanh network trained by Adam. Both operate on a
//! precomputed `N x p` state matrix, so the recurrent weights never see
//! a gradient.

use super::backward::softmax_cross_entropy;
use super::{AdamState, TrainConfig, TrainError};
use crate::numerics::{Matrix, SplitMix64};

/// Number of distinct classes implied by a label slice (max + 1),
/// verifying there are at least two distinct values.
fn infer_classes(labels: &[usize]) -> Result<usize, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let max = *labels.iter().max().unwrap();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(TrainError::SingleClass);
    }
    Ok(max + 1)
}

/// Regularized hinge objective of a one-vs-rest linear SVM:
/// `(1/N) sum_i sum_c max(0, 1 - y_ic w_c.x_i) + (lambda/2) ||W||_F^2`.
pub fn svm_objective(w: &Matrix, states: &Matrix, labels: &[usize], lambda: f64) -> f64 {
    let n = states.rows();
    let scores = states.matmul(&w.transposed()); // n x c
    let mut hinge = 0.0;
    for i in 0..n {
        for (c, &s) in scores.row(i).iter().enumerate() {
            let y = if labels[i] == c { 1.0 } else { -1.0 };
            hinge += (1.0 - y * s).max(0.0);
        }
    }
    hinge / n as f64 + 0.5 * lambda * w.sum_squares()
}

/// One-vs-rest linear SVM on final-step states, trained with the
/// Pegasos schedule: minibatch subgradient steps at rate
/// `eta_t = 1/(lambda t)` with `lambda = 1/(c_reg N)`, seeded shuffling
/// between epochs, and the averaged iterate returned (the average is
/// what Pegasos' convergence guarantee speaks about, and it smooths the
/// late-stage oscillation of the raw iterates).
pub fn fit_svm_head(
    states: &Matrix,
    labels: &[usize],
    c_reg: f64,
    epochs: usize,
    seed: u64,
) -> Result<Matrix, TrainError> {
    let n = states.rows();
    let p = states.cols();
    if labels.len() != n {
        return Err(TrainError::LabelCountMismatch { expected: n, got: labels.len() });
    }
    let classes = infer_classes(labels)?;
    let lambda = 1.0 / (c_reg * n as f64);
    let batch = n.min(256);
    let mut w = Matrix::zeros(classes, p);
    let mut w_avg = Matrix::zeros(classes, p);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::derive(seed, 1);
    let mut t = 0u64;
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            // subgradient of the hinge term over this minibatch
            let mut sub = Matrix::zeros(classes, p);
            for &i in chunk {
                let x = states.row(i);
                for c in 0..classes {
                    let y = if labels[i] == c { 1.0 } else { -1.0 };
                    let score: f64 = w.row(c).iter().zip(x).map(|(a, b)| a * b).sum();
                    if y * score < 1.0 {
                        let row = sub.row_mut(c);
                        for (s, &xv) in row.iter_mut().zip(x) {
                            *s -= y * xv;
                        }
                    }
                }
            }
            w.scale_in_place(1.0 - eta * lambda);
            w.add_scaled(&sub, -eta / chunk.len() as f64);
            w_avg.add_scaled(&w, 1.0);
        }
    }
    if t == 0 {
        return Ok(w);
    }
    w_avg.scale_in_place(1.0 / t as f64);
    Ok(w_avg)
}

/// One-hidden-layer tanh classifier. With `hidden = 0` the hidden layer
/// disappears and the model is a plain linear softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct FfParams {
    pub w1: Matrix, // hidden x p (0 x p when hidden = 0)
    pub b1: Matrix, // 1 x hidden
    pub w2: Matrix, // c x hidden, or c x p when hidden = 0
    pub b2: Matrix, // 1 x c
}

impl FfParams {
    pub fn hidden_size(&self) -> usize {
        self.w1.rows()
    }

    pub fn mats(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn zeros_like(&self) -> FfParams {
        FfParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Matrix::zeros(self.b1.rows(), self.b1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: Matrix::zeros(self.b2.rows(), self.b2.cols()),
        }
    }
}

/// Logits of the feedforward head on a batch of states.
pub fn ff_forward(params: &FfParams, states: &Matrix) -> Matrix {
    let features = if params.hidden_size() == 0 {
        states.clone()
    } else {
        let mut h = states.matmul(&params.w1.transposed());
        for i in 0..h.rows() {
            for (v, &b) in h.row_mut(i).iter_mut().zip(params.b1.row(0)) {
                *v = (*v + b).tanh();
            }
        }
        h
    };
    let mut logits = features.matmul(&params.w2.transposed());
    for i in 0..logits.rows() {
        for (v, &b) in logits.row_mut(i).iter_mut().zip(params.b2.row(0)) {
            *v += b;
        }
    }
    logits
}

/// Mean cross-entropy and its exact gradients for the feedforward head.
pub fn ff_loss_and_grads(
    params: &FfParams,
    states: &Matrix,
    labels: &[usize],
) -> (f64, FfParams) {
    let n = states.rows();
    let hidden = params.hidden_size();
    let features = if hidden == 0 {
        states.clone()
    } else {
        let mut h = states.matmul(&params.w1.transposed());
        for i in 0..n {
            for (v, &b) in h.row_mut(i).iter_mut().zip(params.b1.row(0)) {
                *v = (*v + b).tanh();
            }
        }
        h
    };
    let mut logits = features.matmul(&params.w2.transposed());
    for i in 0..n {
        for (v, &b) in logits.row_mut(i).iter_mut().zip(params.b2.row(0)) {
            *v += b;
        }
    }
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels);
    let mut grads = params.zeros_like();
    grads.w2 = dlogits.matmul_tn(&features);
    for i in 0..n {
        for (g, &d) in grads.b2.row_mut(0).iter_mut().zip(dlogits.row(i)) {
            *g += d;
        }
    }
    if hidden > 0 {
        let mut dz = dlogits.matmul(&params.w2); // n x hidden
        for (z, &h) in dz.as_mut_slice().iter_mut().zip(features.as_slice()) {
            *z *= 1.0 - h * h;
        }
        grads.w1 = dz.matmul_tn(states);
        for i in 0..n {
            for (g, &d) in grads.b1.row_mut(0).iter_mut().zip(dz.row(i)) {
                *g += d;
            }
        }
    }
    (loss, grads)
}

/// Train the feedforward head with Adam on cross-entropy, minibatched
/// with seeded shuffling. The encoder states are fixed inputs.
pub fn fit_ff_head(
    states: &Matrix,
    labels: &[usize],
    hidden: usize,
    config: &TrainConfig,
) -> Result<FfParams, TrainError> {
    let n = states.rows();
    let p = states.cols();
    if labels.len() != n {
        return Err(TrainError::LabelCountMismatch { expected: n, got: labels.len() });
    }
    let classes = infer_classes(labels)?;
    let mut rng = SplitMix64::derive(config.seed, 1);
    let bound1 = if p > 0 { 1.0 / (p as f64).sqrt() } else { 0.0 };
    let w2_cols = if hidden == 0 { p } else { hidden };
    let bound2 = if w2_cols > 0 { 1.0 / (w2_cols as f64).sqrt() } else { 0.0 };
    let mut params = FfParams {
        w1: Matrix::from_fn(hidden, p, |_, _| rng.next_uniform(bound1)),
        b1: Matrix::zeros(1, hidden),
        w2: Matrix::from_fn(classes, w2_cols, |_, _| rng.next_uniform(bound2)),
        b2: Matrix::zeros(1, classes),
    };
    let mut adam = AdamState::for_mats(
        &params.mats(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let batch = config.batch_size.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = SplitMix64::derive(config.seed, 2);
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let sub_states = Matrix::from_fn(chunk.len(), p, |i, j| states.at(chunk[i], j));
            let sub_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = ff_loss_and_grads(&params, &sub_states, &sub_labels);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            super::adam_step_mats(params.mats_mut(), &grads.mats(), &mut adam, config.lr);
        }
    }
    Ok(params)
}

/// Fraction of rows whose argmax logit matches the label.
pub fn ff_accuracy(params: &FfParams, states: &Matrix, labels: &[usize]) -> f64 {
    let logits = ff_forward(params, states);
    let mut hits = 0usize;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two well-separated Gaussian blobs in 2D.
    fn separable_blobs(n_per: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = SplitMix64::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = i % 2;
            let center = if class == 0 { [3.0, 3.0] } else { [-3.0, -3.0] };
            rows.push(vec![
                center[0] + 0.3 * rng.next_normal(),
                center[1] + 0.3 * rng.next_normal(),
            ]);
            labels.push(class);
        }
        (Matrix::from_rows(&rows), labels)
    }

    #[test]
    fn svm_separates_blobs_with_positive_margin() {
        let (states, labels) = separable_blobs(40, 11);
        let w = fit_svm_head(&states, &labels, 10.0, 60, 3).unwrap();
        let mut min_margin = f64::INFINITY;
        let mut hits = 0;
        for i in 0..states.rows() {
            let s0: f64 = w.row(0).iter().zip(states.row(i)).map(|(a, b)| a * b).sum();
            let s1: f64 = w.row(1).iter().zip(states.row(i)).map(|(a, b)| a * b).sum();
            let pred = usize::from(s1 > s0);
            if pred == labels[i] {
                hits += 1;
            }
            let y = if labels[i] == 0 { s0 - s1 } else { s1 - s0 };
            min_margin = min_margin.min(y);
        }
        assert_eq!(hits, states.rows(), "not linearly separated");
        assert!(min_margin > 0.0, "margin {min_margin}");
    }

    #[test]
    fn svm_hinge_non_increasing_over_averaged_iterates() {
        let (states, labels) = separable_blobs(30, 21);
        let lambda = 1.0 / (10.0 * states.rows() as f64);
        let mut previous = f64::INFINITY;
        // Averaged iterates after e epochs are exactly fit_svm_head with
        // epochs = e (same seed restarts the same trajectory).
        for epochs in [2usize, 4, 8, 16, 32, 64] {
            let w = fit_svm_head(&states, &labels, 10.0, epochs, 5).unwrap();
            let objective = svm_objective(&w, &states, &labels, lambda);
            assert!(
                objective <= previous + 1e-6,
                "epochs {epochs}: {objective} > {previous}"
            );
            previous = objective;
        }
    }

    #[test]
    fn svm_rejects_single_class() {
        let states = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let err = fit_svm_head(&states, &[1, 1], 1.0, 5, 0).unwrap_err();
        assert!(matches!(err, TrainError::SingleClass));
    }

    #[test]
    fn ff_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(31);
        let states = Matrix::from_fn(5, 3, |_, _| rng.next_normal());
        let labels = [0usize, 1, 2, 1, 0];
        let mut params = FfParams {
            w1: Matrix::from_fn(4, 3, |_, _| 0.5 * rng.next_normal()),
            b1: Matrix::from_fn(1, 4, |_, _| 0.1 * rng.next_normal()),
            w2: Matrix::from_fn(3, 4, |_, _| 0.5 * rng.next_normal()),
            b2: Matrix::from_fn(1, 3, |_, _| 0.1 * rng.next_normal()),
        };
        let (_, grads) = ff_loss_and_grads(&params, &states, &labels);
        let eps = 1e-6;
        for mi in 0..4 {
            for idx in 0..grads.mats()[mi].as_slice().len() {
                let orig = params.mats()[mi].as_slice()[idx];
                params.mats_mut()[mi].as_mut_slice()[idx] = orig + eps;
                let (up, _) = ff_loss_and_grads(&params, &states, &labels);
                params.mats_mut()[mi].as_mut_slice()[idx] = orig - eps;
                let (down, _) = ff_loss_and_grads(&params, &states, &labels);
                params.mats_mut()[mi].as_mut_slice()[idx] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.mats()[mi].as_slice()[idx];
                let rel = (fd - an).abs() / fd.abs().max(1e-4);
                assert!(rel <= 1e-4, "mat {mi} entry {idx}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn ff_hidden_zero_matches_linear_head_closely() {
        let (states, labels) = separable_blobs(50, 41);
        let config = TrainConfig { epochs: 80, lr: 5e-2, batch_size: 32, seed: 9, ..TrainConfig::default() };
        let ff = fit_ff_head(&states, &labels, 0, &config).unwrap();
        assert_eq!(ff.hidden_size(), 0);
        let linear = crate::init::fit_linear_head(&states, &labels, 2, 1e-6).unwrap();
        let ff_acc = ff_accuracy(&ff, &states, &labels);
        let lin_acc = crate::init::head_accuracy(&linear, &states, &labels);
        assert!(
            (ff_acc - lin_acc).abs() <= 0.005,
            "ff {ff_acc} vs linear {lin_acc}"
        );
    }

    #[test]
    fn ff_with_hidden_layer_fits_xor() {
        // XOR is not linearly separable; the hidden layer must do the work.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut rng = SplitMix64::new(51);
        for i in 0..200 {
            let a = (i / 2) % 2;
            let b = i % 2;
            rows.push(vec![
                a as f64 * 2.0 - 1.0 + 0.1 * rng.next_normal(),
                b as f64 * 2.0 - 1.0 + 0.1 * rng.next_normal(),
            ]);
            labels.push(a ^ b);
        }
        let states = Matrix::from_rows(&rows);
        let config = TrainConfig { epochs: 200, lr: 2e-2, batch_size: 50, seed: 4, ..TrainConfig::default() };
        let ff = fit_ff_head(&states, &labels, 16, &config).unwrap();
        let acc = ff_accuracy(&ff, &states, &labels);
        assert!(acc >= 0.98, "accuracy {acc}");
    }

    #[test]
    fn ff_deterministic_given_seed() {
        let (states, labels) = separable_blobs(20, 61);
        let config = TrainConfig { epochs: 10, lr: 1e-2, batch_size: 16, seed: 13, ..TrainConfig::default() };
        let a = fit_ff_head(&states, &labels, 8, &config).unwrap();
        let b = fit_ff_head(&states, &labels, 8, &config).unwrap();
        assert_eq!(a, b);
    }
}
