//! Bias-corrected Adam over a list of parameter matrices.
//!
//! The core operates on plain matrix slices so the same optimizer
//! drives recurrent models, feedforward heads, and the reconstruction
//! trainer; [`adam_step`] is the [`ModelParams`] convenience wrapper.

use super::ModelParams;
use crate::numerics::Matrix;

/// First/second-moment accumulators, one pair per parameter matrix in
/// the bundle's stable flattening order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self::for_mats(&params.mats(), beta1, beta2, eps)
    }

    /// Accumulators shaped after an arbitrary matrix bundle.
    pub fn for_mats(shapes: &[&Matrix], beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = shapes.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let v = shapes.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        Self { m, v, t: 0, beta1, beta2, eps }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One standard Adam update over an explicit matrix bundle.
/// Deterministic; zero gradients leave the parameters untouched (the
/// moments stay zero, so the update is zero).
pub fn adam_step_mats(
    params: Vec<&mut Matrix>,
    grads: &[&Matrix],
    state: &mut AdamState,
    lr: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let (beta1, beta2, eps) = (state.beta1, state.beta2, state.eps);
    for ((w, g), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        debug_assert_eq!((w.rows(), w.cols()), (g.rows(), g.cols()));
        let ws = w.as_mut_slice();
        let gs = g.as_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for i in 0..ws.len() {
            ms[i] = beta1 * ms[i] + (1.0 - beta1) * gs[i];
            vs[i] = beta2 * vs[i] + (1.0 - beta2) * gs[i] * gs[i];
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            ws[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One Adam update over a recurrent model's parameter bundle.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) {
    adam_step_mats(params.mats_mut(), &grads.mats(), state, lr);
}
