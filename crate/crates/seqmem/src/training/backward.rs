//! Exact reverse-mode BPTT for every architecture, the loss, and the
//! penalty terms.
//!
//! Conventions shared by all four backward passes:
//!
//! * `dlogits` is the loss gradient at the final-step logits (`n x c`).
//! * The activation-regularization gradient `2*alpha/(T*n) * state^t` is
//!   injected into the running state gradient at every timestep, *then*
//!   parameter gradients are formed — so its parameter gradients flow
//!   through the recurrence exactly.
//! * Truncation masks are drawn per timestep *per sequence* in forward
//!   order before the backward sweep, one draw per recurrent edge
//!   (edges into step t for t >= 2). `trunc_p <= 0` draws nothing and
//!   is bit-identical to full BPTT; `trunc_p >= 1` drops every edge,
//!   also without consulting the RNG.
//! * A dropped edge only stops the *flow* into the earlier state;
//!   parameter gradients at the dropped step still accumulate, matching
//!   detach semantics.

use super::ModelParams;
use crate::models::{ForwardTrace, LinearRnnParams, LmnParams, LstmParams, RnnParams};
use crate::numerics::{Matrix, SplitMix64};

/// Gradients plus the per-timestep mean (over sequences) L2 norm of the
/// gradient at the probed state — memory for LMN and linear RNN, hidden
/// for RNN and LSTM. Index t holds the norm at timestep t (`t = 1..=T`);
/// index 0 is the gradient reaching the (constant) initial state, kept
/// because the propagation curves plot it.
#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub grads: ModelParams,
    pub state_grad_norms: Vec<f64>,
}

/// Mean softmax cross-entropy over the batch and its logits gradient
/// `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows();
    let c = logits.cols();
    debug_assert_eq!(n, labels.len());
    let mut dlogits = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - max).exp();
        }
        let log_z = z.ln() + max;
        loss += log_z - row[labels[i]];
        let out = dlogits.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / z;
            out[j] = (p - f64::from(u8::from(j == labels[i]))) / n as f64;
        }
    }
    (loss / n as f64, dlogits)
}

/// Truncation decision per recurrent edge.
enum Trunc {
    Keep,
    Drop,
    Masks(Vec<Vec<bool>>), // masks[t][i]: drop the edge into step t of sequence i
}

impl Trunc {
    /// Draws happen in forward order (t ascending, sequence ascending)
    /// so the stream is independent of the backward implementation.
    fn draw(t_len: usize, n: usize, trunc_p: f64, rng: &mut SplitMix64) -> Trunc {
        if trunc_p <= 0.0 {
            Trunc::Keep
        } else if trunc_p >= 1.0 {
            Trunc::Drop
        } else {
            let mut masks = vec![Vec::new(); t_len];
            for mask in masks.iter_mut() {
                *mask = (0..n).map(|_| rng.next_f64() < trunc_p).collect();
            }
            Trunc::Masks(masks)
        }
    }

    /// Zero the rows of `flow` whose edge into step `t` is dropped.
    fn apply(&self, flow: &mut Matrix, t: usize) {
        match self {
            Trunc::Keep => {}
            Trunc::Drop => flow.scale_in_place(0.0),
            Trunc::Masks(masks) => {
                for (i, &drop) in masks[t].iter().enumerate() {
                    if drop {
                        for v in flow.row_mut(i) {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
    }
}

fn mean_row_norm(m: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..m.rows() {
        total += crate::numerics::vec_norm(m.row(i));
    }
    total / m.rows().max(1) as f64
}

/// `dh * (1 - h^2)` elementwise: tanh backward from the activation.
fn tanh_backward(dh: &Matrix, h: &Matrix) -> Matrix {
    let mut out = dh.clone();
    for (o, &hv) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
        *o *= 1.0 - hv * hv;
    }
    out
}

/// Exact BPTT for the final-step cross-entropy (`dlogits`) plus the
/// activation penalty, with stochastic truncation of the nonlinear
/// recurrent path.
pub fn bptt_backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    steps: &[Matrix],
    dlogits: &Matrix,
    alpha_act: f64,
    trunc_p: f64,
    rng: &mut SplitMix64,
) -> BackwardResult {
    match (params, trace) {
        (ModelParams::LinearRnn(p), ForwardTrace::LinearRnn(t)) => {
            linear_rnn_backward(p, t, steps, dlogits, alpha_act)
        }
        (ModelParams::Rnn(p), ForwardTrace::Rnn(t)) => {
            rnn_backward(p, t, steps, dlogits, alpha_act, trunc_p, rng)
        }
        (ModelParams::Lmn(p), ForwardTrace::Lmn(t)) => {
            lmn_backward(p, t, steps, dlogits, alpha_act, trunc_p, rng)
        }
        (ModelParams::Lstm(p), ForwardTrace::Lstm(t)) => {
            lstm_backward(p, t, steps, dlogits, alpha_act, trunc_p, rng)
        }
        _ => panic!("trace does not match parameter architecture"),
    }
}

/// The linear RNN's only recurrent path is the linear one, which always
/// carries gradient, so truncation does not apply here.
fn linear_rnn_backward(
    p: &LinearRnnParams,
    trace: &crate::models::LinearRnnTrace,
    steps: &[Matrix],
    dlogits: &Matrix,
    alpha_act: f64,
) -> BackwardResult {
    let t_len = steps.len();
    let n = steps[0].rows();
    let coef = 2.0 * alpha_act / (t_len as f64 * n as f64);
    let mut da = Matrix::zeros(p.a.rows(), p.a.cols());
    let mut db = Matrix::zeros(p.b.rows(), p.b.cols());
    let dwo = dlogits.matmul_tn(&trace.states[t_len - 1]);
    let mut dm = dlogits.matmul(&p.w_o);
    let mut norms = vec![0.0; t_len + 1];
    for t in (0..t_len).rev() {
        if alpha_act > 0.0 {
            dm.add_scaled(&trace.states[t], coef);
        }
        norms[t + 1] = mean_row_norm(&dm);
        da.add_scaled(&dm.matmul_tn(&steps[t]), 1.0);
        if t > 0 {
            db.add_scaled(&dm.matmul_tn(&trace.states[t - 1]), 1.0);
        }
        dm = dm.matmul(&p.b);
    }
    norms[0] = mean_row_norm(&dm);
    BackwardResult {
        grads: ModelParams::LinearRnn(LinearRnnParams { a: da, b: db, w_o: dwo }),
        state_grad_norms: norms,
    }
}

fn rnn_backward(
    p: &RnnParams,
    trace: &crate::models::RnnTrace,
    steps: &[Matrix],
    dlogits: &Matrix,
    alpha_act: f64,
    trunc_p: f64,
    rng: &mut SplitMix64,
) -> BackwardResult {
    let t_len = steps.len();
    let n = steps[0].rows();
    let trunc = Trunc::draw(t_len, n, trunc_p, rng);
    let coef = 2.0 * alpha_act / (t_len as f64 * n as f64);
    let mut dv = Matrix::zeros(p.v.rows(), p.v.cols());
    let mut du = Matrix::zeros(p.u.rows(), p.u.cols());
    let dwo = dlogits.matmul_tn(&trace.hidden[t_len - 1]);
    let mut dh = dlogits.matmul(&p.w_o);
    let mut norms = vec![0.0; t_len + 1];
    for t in (0..t_len).rev() {
        if alpha_act > 0.0 {
            dh.add_scaled(&trace.hidden[t], coef);
        }
        norms[t + 1] = mean_row_norm(&dh);
        let dz = tanh_backward(&dh, &trace.hidden[t]);
        dv.add_scaled(&dz.matmul_tn(&steps[t]), 1.0);
        if t > 0 {
            du.add_scaled(&dz.matmul_tn(&trace.hidden[t - 1]), 1.0);
        }
        let mut flow = dz.matmul(&p.u);
        trunc.apply(&mut flow, t);
        dh = flow;
    }
    norms[0] = mean_row_norm(&dh);
    BackwardResult {
        grads: ModelParams::Rnn(RnnParams { v: dv, u: du, w_o: dwo }),
        state_grad_norms: norms,
    }
}

fn lmn_backward(
    p: &LmnParams,
    trace: &crate::models::LmnTrace,
    steps: &[Matrix],
    dlogits: &Matrix,
    alpha_act: f64,
    trunc_p: f64,
    rng: &mut SplitMix64,
) -> BackwardResult {
    let t_len = steps.len();
    let n = steps[0].rows();
    let trunc = Trunc::draw(t_len, n, trunc_p, rng);
    let coef = 2.0 * alpha_act / (t_len as f64 * n as f64);
    let mut d_xh = Matrix::zeros(p.w_xh.rows(), p.w_xh.cols());
    let mut d_mh = Matrix::zeros(p.w_mh.rows(), p.w_mh.cols());
    let mut d_hm = Matrix::zeros(p.w_hm.rows(), p.w_hm.cols());
    let mut d_mm = Matrix::zeros(p.w_mm.rows(), p.w_mm.cols());
    let dwo = dlogits.matmul_tn(&trace.memory[t_len - 1]);
    let mut dm = dlogits.matmul(&p.w_o);
    let mut norms = vec![0.0; t_len + 1];
    for t in (0..t_len).rev() {
        if alpha_act > 0.0 {
            dm.add_scaled(&trace.memory[t], coef);
        }
        norms[t + 1] = mean_row_norm(&dm);
        let dh = dm.matmul(&p.w_hm);
        d_hm.add_scaled(&dm.matmul_tn(&trace.hidden[t]), 1.0);
        let dzh = tanh_backward(&dh, &trace.hidden[t]);
        d_xh.add_scaled(&dzh.matmul_tn(&steps[t]), 1.0);
        if t > 0 {
            d_mm.add_scaled(&dm.matmul_tn(&trace.memory[t - 1]), 1.0);
            d_mh.add_scaled(&dzh.matmul_tn(&trace.memory[t - 1]), 1.0);
        }
        // The linear memory path always carries gradient; only the
        // nonlinear path through W_mh is subject to truncation.
        let mut nonlinear = dzh.matmul(&p.w_mh);
        trunc.apply(&mut nonlinear, t);
        let mut next = dm.matmul(&p.w_mm);
        next.add_scaled(&nonlinear, 1.0);
        dm = next;
    }
    norms[0] = mean_row_norm(&dm);
    BackwardResult {
        grads: ModelParams::Lmn(LmnParams { w_xh: d_xh, w_mh: d_mh, w_hm: d_hm, w_mm: d_mm, w_o: dwo }),
        state_grad_norms: norms,
    }
}

fn lstm_backward(
    p: &LstmParams,
    trace: &crate::models::LstmTrace,
    steps: &[Matrix],
    dlogits: &Matrix,
    alpha_act: f64,
    trunc_p: f64,
    rng: &mut SplitMix64,
) -> BackwardResult {
    let t_len = steps.len();
    let n = steps[0].rows();
    let d = p.d();
    let hp = p.p();
    let trunc = Trunc::draw(t_len, n, trunc_p, rng);
    let coef = 2.0 * alpha_act / (t_len as f64 * n as f64);

    let mut dw = [
        Matrix::zeros(hp, d + hp),
        Matrix::zeros(hp, d + hp),
        Matrix::zeros(hp, d + hp),
        Matrix::zeros(hp, d + hp),
    ];
    let mut db = [
        Matrix::zeros(1, hp),
        Matrix::zeros(1, hp),
        Matrix::zeros(1, hp),
        Matrix::zeros(1, hp),
    ];
    let dwo = dlogits.matmul_tn(&trace.hidden[t_len - 1]);
    let mut dh = dlogits.matmul(&p.w_o);
    let mut dc = Matrix::zeros(n, hp);
    let mut norms = vec![0.0; t_len + 1];
    let zero_state = Matrix::zeros(n, hp);

    for t in (0..t_len).rev() {
        if alpha_act > 0.0 {
            dh.add_scaled(&trace.hidden[t], coef);
        }
        norms[t + 1] = mean_row_norm(&dh);
        let g = &trace.gates[t];
        let c_t = &trace.cell[t];
        let c_prev = if t > 0 { &trace.cell[t - 1] } else { &zero_state };
        let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zero_state };

        // Split dh into the output-gate pre-activation gradient and the
        // cell contribution; fold the latter into the carried dc.
        let mut dzo = Matrix::zeros(n, hp);
        for i in 0..n {
            for j in 0..hp {
                let tc = c_t.at(i, j).tanh();
                let ov = g.o.at(i, j);
                let dhv = dh.at(i, j);
                *dzo.at_mut(i, j) = dhv * tc * ov * (1.0 - ov);
                *dc.at_mut(i, j) += dhv * ov * (1.0 - tc * tc);
            }
        }
        let mut dzi = Matrix::zeros(n, hp);
        let mut dzf = Matrix::zeros(n, hp);
        let mut dzg = Matrix::zeros(n, hp);
        for i in 0..n {
            for j in 0..hp {
                let dcv = dc.at(i, j);
                let iv = g.i.at(i, j);
                let fv = g.f.at(i, j);
                let gv = g.g.at(i, j);
                *dzi.at_mut(i, j) = dcv * gv * iv * (1.0 - iv);
                *dzf.at_mut(i, j) = dcv * c_prev.at(i, j) * fv * (1.0 - fv);
                *dzg.at_mut(i, j) = dcv * iv * (1.0 - gv * gv);
            }
        }

        // Rebuild the concatenated input [x ; h^{t-1}] for this step.
        let mut xh = Matrix::zeros(n, d + hp);
        for i in 0..n {
            xh.row_mut(i)[..d].copy_from_slice(steps[t].row(i));
            xh.row_mut(i)[d..].copy_from_slice(h_prev.row(i));
        }
        for (dst, dz) in dw.iter_mut().zip([&dzi, &dzf, &dzg, &dzo]) {
            dst.add_scaled(&dz.matmul_tn(&xh), 1.0);
        }
        for (dst, dz) in db.iter_mut().zip([&dzi, &dzf, &dzg, &dzo]) {
            for i in 0..n {
                for j in 0..hp {
                    *dst.at_mut(0, j) += dz.at(i, j);
                }
            }
        }

        // Gradient into [x; h^{t-1}] through all four gates; only the
        // hidden slice is needed.
        let mut dxh = dzi.matmul(&p.w_i);
        dxh.add_scaled(&dzf.matmul(&p.w_f), 1.0);
        dxh.add_scaled(&dzg.matmul(&p.w_c), 1.0);
        dxh.add_scaled(&dzo.matmul(&p.w_og), 1.0);
        let mut dh_prev = Matrix::zeros(n, hp);
        for i in 0..n {
            dh_prev.row_mut(i).copy_from_slice(&dxh.row(i)[d..]);
        }
        trunc.apply(&mut dh_prev, t);
        dh = dh_prev;
        // The cell path always carries gradient.
        for i in 0..n {
            for j in 0..hp {
                *dc.at_mut(i, j) *= g.f.at(i, j);
            }
        }
    }
    norms[0] = mean_row_norm(&dh);
    let [g_wi, g_wf, g_wc, g_wog] = dw;
    let [g_bi, g_bf, g_bc, g_bog] = db;
    BackwardResult {
        grads: ModelParams::Lstm(LstmParams {
            w_i: g_wi,
            w_f: g_wf,
            w_c: g_wc,
            w_og: g_wog,
            b_i: g_bi,
            b_f: g_bf,
            b_c: g_bc,
            b_og: g_bog,
            w_o: dwo,
        }),
        state_grad_norms: norms,
    }
}

/// Penalty values and the closed-form part of their gradients.
///
/// Returns the summed value of both penalties — soft orthogonality
/// `lambda * ||W^T W - I||_F^2` over each recurrent matrix and the
/// activation term `alpha/(T*n) * sum_t ||state^t||_F^2` read off the
/// trace — together with the orthogonality gradient
/// `4 lambda W (W^T W - I)`. The activation term's parameter gradients
/// are produced inside [`bptt_backward`] (they must flow through the
/// recurrence), so they are not duplicated here.
pub fn penalty_terms(
    params: &ModelParams,
    lambda_ortho: f64,
    alpha_act: f64,
    trace: &ForwardTrace,
) -> (f64, ModelParams) {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    if lambda_ortho > 0.0 {
        let mats = params.mats();
        let indices = params.recurrent_indices();
        let mut grad_mats = grads.mats_mut();
        for &idx in indices {
            let w = mats[idx];
            let mut r = w.matmul_tn(w);
            for i in 0..r.rows() {
                *r.at_mut(i, i) -= 1.0;
            }
            loss += lambda_ortho * r.sum_squares();
            let g = w.matmul(&r).scaled(4.0 * lambda_ortho);
            grad_mats[idx].add_scaled(&g, 1.0);
        }
    }
    if alpha_act > 0.0 {
        let states: &[Matrix] = match trace {
            ForwardTrace::LinearRnn(t) => &t.states,
            ForwardTrace::Rnn(t) => &t.hidden,
            ForwardTrace::Lmn(t) => &t.memory,
            ForwardTrace::Lstm(t) => &t.hidden,
        };
        let t_len = states.len();
        let n = states.first().map(|s| s.rows()).unwrap_or(1);
        let total: f64 = states.iter().map(|s| s.sum_squares()).sum();
        loss += alpha_act * total / (t_len as f64 * n as f64);
    }
    (loss, grads)
}

/// Forward + loss + penalties, for gradient checking.
#[cfg(test)]
pub(crate) fn full_loss(
    params: &ModelParams,
    steps: &[Matrix],
    labels: &[usize],
    lambda_ortho: f64,
    alpha_act: f64,
) -> Result<f64, super::TrainError> {
    let trace = params.forward(steps)?;
    let (ce, _) = softmax_cross_entropy(trace.logits(), labels);
    let (penalty, _) = penalty_terms(params, lambda_ortho, alpha_act, &trace);
    Ok(ce + penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearRnnParams, LmnParams, LstmParams, RnnParams};

    fn random_steps(t: usize, n: usize, d: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = SplitMix64::new(seed);
        (0..t).map(|_| Matrix::from_fn(n, d, |_, _| rng.next_normal())).collect()
    }

    fn random_params(kind: usize, p: usize, d: usize, c: usize, seed: u64) -> ModelParams {
        let mut rng = SplitMix64::new(seed);
        let mut m = |r, cc| Matrix::from_fn(r, cc, |_, _| 0.4 * rng.next_normal());
        match kind {
            0 => ModelParams::LinearRnn(LinearRnnParams { a: m(p, d), b: m(p, p), w_o: m(c, p) }),
            1 => ModelParams::Rnn(RnnParams { v: m(p, d), u: m(p, p), w_o: m(c, p) }),
            2 => ModelParams::Lmn(LmnParams {
                w_xh: m(p, d),
                w_mh: m(p, p),
                w_hm: m(p, p),
                w_mm: m(p, p),
                w_o: m(c, p),
            }),
            _ => ModelParams::Lstm(LstmParams {
                w_i: m(p, d + p),
                w_f: m(p, d + p),
                w_c: m(p, d + p),
                w_og: m(p, d + p),
                b_i: m(1, p),
                b_f: m(1, p),
                b_c: m(1, p),
                b_og: m(1, p),
                w_o: m(c, p),
            }),
        }
    }

    /// Analytic gradient as the train loop assembles it: BPTT plus the
    /// orthogonality closed form.
    fn analytic_grads(
        params: &ModelParams,
        steps: &[Matrix],
        labels: &[usize],
        lambda: f64,
        alpha: f64,
    ) -> ModelParams {
        let trace = params.forward(steps).unwrap();
        let (_, dlogits) = softmax_cross_entropy(trace.logits(), labels);
        let mut rng = SplitMix64::new(0);
        let result = bptt_backward(params, &trace, steps, &dlogits, alpha, 0.0, &mut rng);
        let mut grads = result.grads;
        let (_, ortho) = penalty_terms(params, lambda, alpha, &trace);
        for (g, o) in grads.mats_mut().into_iter().zip(ortho.mats()) {
            g.add_scaled(o, 1.0);
        }
        grads
    }

    fn max_relative_fd_error(
        params: &ModelParams,
        steps: &[Matrix],
        labels: &[usize],
        lambda: f64,
        alpha: f64,
    ) -> f64 {
        let grads = analytic_grads(params, steps, labels, lambda, alpha);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let flat: Vec<f64> = grads.mats().iter().flat_map(|m| m.as_slice().to_vec()).collect();
        let scale = flat.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-8);
        let mut probe = params.clone();
        let n_mats = grads.mats().len();
        for mi in 0..n_mats {
            let (rows, cols) = {
                let m = grads.mats()[mi];
                (m.rows(), m.cols())
            };
            for i in 0..rows {
                for j in 0..cols {
                    let orig = probe.mats()[mi].at(i, j);
                    *probe.mats_mut()[mi].at_mut(i, j) = orig + eps;
                    let up = full_loss(&probe, steps, labels, lambda, alpha).unwrap();
                    *probe.mats_mut()[mi].at_mut(i, j) = orig - eps;
                    let down = full_loss(&probe, steps, labels, lambda, alpha).unwrap();
                    *probe.mats_mut()[mi].at_mut(i, j) = orig;
                    let fd = (up - down) / (2.0 * eps);
                    let an = grads.mats()[mi].at(i, j);
                    let rel = (fd - an).abs() / scale.max(fd.abs());
                    worst = worst.max(rel);
                }
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_all_architectures() {
        for kind in 0..4 {
            let params = random_params(kind, 4, 3, 3, 100 + kind as u64);
            let steps = random_steps(6, 3, 3, 200 + kind as u64);
            let labels = [0usize, 2, 1];
            let err = max_relative_fd_error(&params, &steps, &labels, 0.0, 0.0);
            assert!(err <= 1e-4, "kind {kind}: max relative error {err}");
        }
    }

    #[test]
    fn gradients_with_regularizers_match_finite_differences() {
        for kind in 1..3 {
            let params = random_params(kind, 4, 2, 2, 300 + kind as u64);
            let steps = random_steps(5, 2, 2, 400 + kind as u64);
            let labels = [1usize, 0];
            let err = max_relative_fd_error(&params, &steps, &labels, 1e-3, 2.0);
            assert!(err <= 1e-4, "kind {kind}: max relative error {err}");
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let params = random_params(2, 3, 2, 2, 7);
        let steps = random_steps(4, 2, 2, 8);
        let trace = params.forward(&steps).unwrap();
        let dlogits = Matrix::zeros(2, 2);
        let mut rng = SplitMix64::new(0);
        let result = bptt_backward(&params, &trace, &steps, &dlogits, 0.0, 0.0, &mut rng);
        for m in result.grads.mats() {
            assert_eq!(m.sum_squares(), 0.0);
        }
    }

    #[test]
    fn trunc_zero_never_consults_rng_and_matches_full_bptt() {
        let params = random_params(1, 4, 2, 2, 9);
        let steps = random_steps(5, 3, 2, 10);
        let labels = [0usize, 1, 0];
        let trace = params.forward(&steps).unwrap();
        let (_, dlogits) = softmax_cross_entropy(trace.logits(), &labels);
        let mut rng_a = SplitMix64::new(555);
        let before = rng_a.clone();
        let a = bptt_backward(&params, &trace, &steps, &dlogits, 0.0, 0.0, &mut rng_a);
        assert_eq!(rng_a, before, "rng consumed at trunc_p = 0");
        let mut rng_b = SplitMix64::new(999);
        let b = bptt_backward(&params, &trace, &steps, &dlogits, 0.0, 0.0, &mut rng_b);
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn full_truncation_on_orthogonal_lmn_keeps_norms_constant() {
        let p = 6;
        let lmn = crate::init::init_orthogonal_lmn(p, p, 2, 3, 77);
        let params = ModelParams::Lmn(lmn);
        let steps = random_steps(32, 4, 2, 11);
        let labels = [0usize, 1, 2, 0];
        let trace = params.forward(&steps).unwrap();
        let (_, dlogits) = softmax_cross_entropy(trace.logits(), &labels);
        let mut rng = SplitMix64::new(1);
        let result = bptt_backward(&params, &trace, &steps, &dlogits, 0.0, 1.0, &mut rng);
        assert_eq!(result.state_grad_norms.len(), 33); // t = 0..=32
        let last = *result.state_grad_norms.last().unwrap();
        for (t, &norm) in result.state_grad_norms.iter().enumerate() {
            assert!(
                (norm - last).abs() <= 1e-10 * last.max(1.0),
                "t = {t}: {norm} vs {last}"
            );
        }
    }

    #[test]
    fn truncation_probabilities_interpolate() {
        // Dropping edges can only remove gradient contributions at the
        // sequence start; check p=1 kills the early-step flow for an RNN.
        let params = random_params(1, 4, 2, 2, 13);
        let steps = random_steps(8, 2, 2, 14);
        let labels = [0usize, 1];
        let trace = params.forward(&steps).unwrap();
        let (_, dlogits) = softmax_cross_entropy(trace.logits(), &labels);
        let mut rng = SplitMix64::new(2);
        let full = bptt_backward(&params, &trace, &steps, &dlogits, 0.0, 0.0, &mut rng);
        let cut = bptt_backward(&params, &trace, &steps, &dlogits, 0.0, 1.0, &mut rng);
        assert!(full.state_grad_norms[0] > 0.0);
        assert_eq!(cut.state_grad_norms[0], 0.0);
        // parameter gradients still accumulate at dropped steps: the
        // final-step W_o and last-step input gradients are identical
        let ModelParams::Rnn(fg) = &full.grads else { unreachable!() };
        let ModelParams::Rnn(cg) = &cut.grads else { unreachable!() };
        assert_eq!(fg.w_o, cg.w_o);
        assert!(cg.v.sum_squares() > 0.0);
    }

    #[test]
    fn ortho_penalty_hand_example() {
        // W = 2I (n=2), lambda=1 -> ||4I - I||_F^2 = 18.
        let params = ModelParams::Rnn(RnnParams {
            v: Matrix::zeros(2, 2),
            u: Matrix::identity(2).scaled(2.0),
            w_o: Matrix::zeros(2, 2),
        });
        let steps = random_steps(2, 1, 2, 15);
        let trace = params.forward(&steps).unwrap();
        let (loss, grads) = penalty_terms(&params, 1.0, 0.0, &trace);
        assert!((loss - 18.0).abs() < 1e-12);
        // gradient: 4 * W * (W^T W - I) = 4 * 2I * 3I = 24I
        let ModelParams::Rnn(g) = &grads else { unreachable!() };
        assert!((g.u.at(0, 0) - 24.0).abs() < 1e-12);
        assert!((g.u.at(0, 1)).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_matrix_has_zero_penalty() {
        let u = crate::numerics::random_orthogonal(5, 3).unwrap();
        let params = ModelParams::Rnn(RnnParams {
            v: Matrix::zeros(5, 2),
            u,
            w_o: Matrix::zeros(2, 5),
        });
        let steps = random_steps(2, 1, 2, 16);
        let trace = params.forward(&steps).unwrap();
        let (loss, grads) = penalty_terms(&params, 1e-2, 0.0, &trace);
        assert!(loss < 1e-20);
        let ModelParams::Rnn(g) = &grads else { unreachable!() };
        assert!(g.u.frobenius_norm() < 1e-11);
    }

    #[test]
    fn softmax_gradient_sums_to_zero_per_row() {
        let logits = Matrix::from_rows(&[vec![2.0, -1.0, 0.3], vec![0.0, 0.0, 0.0]]);
        let (loss, d) = softmax_cross_entropy(&logits, &[0, 2]);
        assert!(loss > 0.0);
        for i in 0..2 {
            let s: f64 = d.row(i).iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
