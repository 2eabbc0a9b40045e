//! Forward dynamics for the four architectures: linear RNN, Elman RNN,
//! Linear Memory Network, and a single-layer LSTM baseline.
//!
//! All forwards run *batched*: a step list `steps[t]` is an `n x d`
//! matrix holding timestep `t` of `n` equal-length sequences, and states
//! are `n x p` matrices updated in lockstep. Single sequences are just
//! the `n = 1` case (see [`steps_from_seq`]). Classification reads the
//! final step only: logits are `W_o` applied to the last state.
//!
//! Each forward returns a [`ForwardTrace`] storing exactly the
//! per-timestep quantities backpropagation needs — hidden states for
//! tanh derivatives, memory/cell states for the recurrent chain, gate
//! activations for the LSTM — and nothing else.

use crate::numerics::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("forward pass needs at least one timestep")]
    EmptyInput,
}

/// Linear recurrence `m^t = A x^t + B m^{t-1}` with readout `y = W_o m^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRnnParams {
    pub a: Matrix,   // p x d
    pub b: Matrix,   // p x p
    pub w_o: Matrix, // c x p
}

/// Elman network `h^t = tanh(V x^t + U h^{t-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub v: Matrix,   // p x d
    pub u: Matrix,   // p x p
    pub w_o: Matrix, // c x p
}

/// Linear Memory Network: nonlinear hidden update feeding a linear
/// memory, readout from the memory state.
///
/// `h^t = tanh(W_xh x^t + W_mh m^{t-1})`, `m^t = W_hm h^t + W_mm m^{t-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmnParams {
    pub w_xh: Matrix, // p_h x d
    pub w_mh: Matrix, // p_h x p_m
    pub w_hm: Matrix, // p_m x p_h
    pub w_mm: Matrix, // p_m x p_m
    pub w_o: Matrix,  // c x p_m
}

/// Single-layer LSTM; each gate weight acts on the concatenation
/// `[x^t; h^{t-1}]` and carries a bias row.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_i: Matrix, // p x (d+p)
    pub w_f: Matrix,
    pub w_c: Matrix,
    pub w_og: Matrix,
    pub b_i: Matrix, // 1 x p
    pub b_f: Matrix,
    pub b_c: Matrix,
    pub b_og: Matrix,
    pub w_o: Matrix, // c x p
}

impl LinearRnnParams {
    pub fn zeros(p: usize, d: usize, c: usize) -> Self {
        Self { a: Matrix::zeros(p, d), b: Matrix::zeros(p, p), w_o: Matrix::zeros(c, p) }
    }

    pub fn p(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }
}

impl RnnParams {
    pub fn zeros(p: usize, d: usize, c: usize) -> Self {
        Self { v: Matrix::zeros(p, d), u: Matrix::zeros(p, p), w_o: Matrix::zeros(c, p) }
    }

    pub fn p(&self) -> usize {
        self.v.rows()
    }

    pub fn d(&self) -> usize {
        self.v.cols()
    }
}

impl LmnParams {
    pub fn zeros(p_h: usize, p_m: usize, d: usize, c: usize) -> Self {
        Self {
            w_xh: Matrix::zeros(p_h, d),
            w_mh: Matrix::zeros(p_h, p_m),
            w_hm: Matrix::zeros(p_m, p_h),
            w_mm: Matrix::zeros(p_m, p_m),
            w_o: Matrix::zeros(c, p_m),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xh.rows()
    }

    pub fn memory_size(&self) -> usize {
        self.w_mm.rows()
    }

    pub fn d(&self) -> usize {
        self.w_xh.cols()
    }
}

impl LstmParams {
    /// All weights zero except the forget-gate bias, which starts at 1.0
    /// so an untrained cell neither forgets nor writes.
    pub fn zeros(p: usize, d: usize, c: usize) -> Self {
        let mut b_f = Matrix::zeros(1, p);
        for j in 0..p {
            *b_f.at_mut(0, j) = 1.0;
        }
        Self {
            w_i: Matrix::zeros(p, d + p),
            w_f: Matrix::zeros(p, d + p),
            w_c: Matrix::zeros(p, d + p),
            w_og: Matrix::zeros(p, d + p),
            b_i: Matrix::zeros(1, p),
            b_f,
            b_c: Matrix::zeros(1, p),
            b_og: Matrix::zeros(1, p),
            w_o: Matrix::zeros(c, p),
        }
    }

    pub fn p(&self) -> usize {
        self.w_i.rows()
    }

    pub fn d(&self) -> usize {
        self.w_i.cols() - self.w_i.rows()
    }
}

/// Per-timestep quantities recorded by a forward pass; exactly what
/// exact BPTT needs, per architecture.
#[derive(Clone, Debug)]
pub enum ForwardTrace {
    LinearRnn(LinearRnnTrace),
    Rnn(RnnTrace),
    Lmn(LmnTrace),
    Lstm(LstmTrace),
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        match self {
            ForwardTrace::LinearRnn(t) => &t.logits,
            ForwardTrace::Rnn(t) => &t.logits,
            ForwardTrace::Lmn(t) => &t.logits,
            ForwardTrace::Lstm(t) => &t.logits,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ForwardTrace::LinearRnn(t) => t.states.len(),
            ForwardTrace::Rnn(t) => t.hidden.len(),
            ForwardTrace::Lmn(t) => t.memory.len(),
            ForwardTrace::Lstm(t) => t.hidden.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct LinearRnnTrace {
    /// `m^1 .. m^T`, each `n x p`.
    pub states: Vec<Matrix>,
    pub logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct RnnTrace {
    /// `h^1 .. h^T`; tanh derivatives are recomputed as `1 - h^2`.
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct LmnTrace {
    /// Nonlinear functional states `h^1 .. h^T`, each `n x p_h`.
    pub hidden: Vec<Matrix>,
    /// Memory states `m^1 .. m^T`, each `n x p_m`.
    pub memory: Vec<Matrix>,
    pub logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct LstmGates {
    pub i: Matrix,
    pub f: Matrix,
    pub g: Matrix,
    pub o: Matrix,
}

#[derive(Clone, Debug)]
pub struct LstmTrace {
    pub gates: Vec<LstmGates>,
    /// Cell states `c^1 .. c^T`.
    pub cell: Vec<Matrix>,
    /// Hidden states `h^1 .. h^T`.
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
}

/// View a single `T x d` sequence as a step list of `1 x d` matrices.
pub fn steps_from_seq(seq: &Matrix) -> Vec<Matrix> {
    (0..seq.rows())
        .map(|t| Matrix::from_vec(1, seq.cols(), seq.row(t).to_vec()))
        .collect()
}

/// Stack equal-length sequences into lockstep steps: `steps[t]` is
/// `n x d` with row `i` taken from sequence `i`.
pub fn steps_from_batch(seqs: &[&Matrix]) -> Result<Vec<Matrix>, ModelError> {
    let first = seqs.first().ok_or(ModelError::EmptyInput)?;
    let (t_len, d) = (first.rows(), first.cols());
    for s in seqs {
        if s.rows() != t_len {
            return Err(ModelError::DimensionMismatch {
                context: "steps_from_batch: unequal sequence lengths",
                expected: t_len,
                got: s.rows(),
            });
        }
        if s.cols() != d {
            return Err(ModelError::DimensionMismatch {
                context: "steps_from_batch: unequal feature dims",
                expected: d,
                got: s.cols(),
            });
        }
    }
    Ok((0..t_len)
        .map(|t| {
            let mut m = Matrix::zeros(seqs.len(), d);
            for (i, s) in seqs.iter().enumerate() {
                m.row_mut(i).copy_from_slice(s.row(t));
            }
            m
        })
        .collect())
}

fn check_steps(steps: &[Matrix], d: usize, context: &'static str) -> Result<usize, ModelError> {
    let first = steps.first().ok_or(ModelError::EmptyInput)?;
    let n = first.rows();
    for s in steps {
        if s.cols() != d {
            return Err(ModelError::DimensionMismatch { context, expected: d, got: s.cols() });
        }
        if s.rows() != n {
            return Err(ModelError::DimensionMismatch { context, expected: n, got: s.rows() });
        }
    }
    Ok(n)
}

/// `m^t = A x^t + B m^{t-1}` from `m^0 = 0`; logits `W_o m^T`.
pub fn linear_rnn_forward(
    params: &LinearRnnParams,
    steps: &[Matrix],
) -> Result<ForwardTrace, ModelError> {
    let n = check_steps(steps, params.d(), "linear_rnn_forward")?;
    let a_t = params.a.transposed();
    let b_t = params.b.transposed();
    let mut states = Vec::with_capacity(steps.len());
    let mut m = Matrix::zeros(n, params.p());
    for x in steps {
        let mut next = x.matmul(&a_t);
        next.add_scaled(&m.matmul(&b_t), 1.0);
        m = next;
        states.push(m.clone());
    }
    let logits = m.matmul(&params.w_o.transposed());
    Ok(ForwardTrace::LinearRnn(LinearRnnTrace { states, logits }))
}

/// `h^t = tanh(V x^t + U h^{t-1})` from `h^0 = 0`; logits `W_o h^T`.
pub fn rnn_forward(params: &RnnParams, steps: &[Matrix]) -> Result<ForwardTrace, ModelError> {
    let n = check_steps(steps, params.d(), "rnn_forward")?;
    let v_t = params.v.transposed();
    let u_t = params.u.transposed();
    let mut hidden = Vec::with_capacity(steps.len());
    let mut h = Matrix::zeros(n, params.p());
    for x in steps {
        let mut z = x.matmul(&v_t);
        z.add_scaled(&h.matmul(&u_t), 1.0);
        h = z.map(f64::tanh);
        hidden.push(h.clone());
    }
    let logits = h.matmul(&params.w_o.transposed());
    Ok(ForwardTrace::Rnn(RnnTrace { hidden, logits }))
}

/// LMN step: `h^t = tanh(W_xh x^t + W_mh m^{t-1})`,
/// `m^t = W_hm h^t + W_mm m^{t-1}`; logits from the memory.
pub fn lmn_forward(params: &LmnParams, steps: &[Matrix]) -> Result<ForwardTrace, ModelError> {
    let n = check_steps(steps, params.d(), "lmn_forward")?;
    let xh_t = params.w_xh.transposed();
    let mh_t = params.w_mh.transposed();
    let hm_t = params.w_hm.transposed();
    let mm_t = params.w_mm.transposed();
    let mut hidden = Vec::with_capacity(steps.len());
    let mut memory = Vec::with_capacity(steps.len());
    let mut m = Matrix::zeros(n, params.memory_size());
    for x in steps {
        let mut z = x.matmul(&xh_t);
        z.add_scaled(&m.matmul(&mh_t), 1.0);
        let h = z.map(f64::tanh);
        let mut next = h.matmul(&hm_t);
        next.add_scaled(&m.matmul(&mm_t), 1.0);
        m = next;
        hidden.push(h);
        memory.push(m.clone());
    }
    let logits = m.matmul(&params.w_o.transposed());
    Ok(ForwardTrace::Lmn(LmnTrace { hidden, memory, logits }))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Standard LSTM cell from `c^0 = h^0 = 0`; logits `W_o h^T`.
pub fn lstm_forward(params: &LstmParams, steps: &[Matrix]) -> Result<ForwardTrace, ModelError> {
    let n = check_steps(steps, params.d(), "lstm_forward")?;
    let p = params.p();
    let d = params.d();
    let wi_t = params.w_i.transposed();
    let wf_t = params.w_f.transposed();
    let wc_t = params.w_c.transposed();
    let wo_t = params.w_og.transposed();
    let mut gates = Vec::with_capacity(steps.len());
    let mut cell = Vec::with_capacity(steps.len());
    let mut hidden = Vec::with_capacity(steps.len());
    let mut h = Matrix::zeros(n, p);
    let mut c = Matrix::zeros(n, p);
    for x in steps {
        // xh = [x ; h^{t-1}] per row
        let mut xh = Matrix::zeros(n, d + p);
        for r in 0..n {
            xh.row_mut(r)[..d].copy_from_slice(x.row(r));
            xh.row_mut(r)[d..].copy_from_slice(h.row(r));
        }
        let mut zi = xh.matmul(&wi_t);
        let mut zf = xh.matmul(&wf_t);
        let mut zc = xh.matmul(&wc_t);
        let mut zo = xh.matmul(&wo_t);
        for r in 0..n {
            for j in 0..p {
                *zi.at_mut(r, j) += params.b_i.at(0, j);
                *zf.at_mut(r, j) += params.b_f.at(0, j);
                *zc.at_mut(r, j) += params.b_c.at(0, j);
                *zo.at_mut(r, j) += params.b_og.at(0, j);
            }
        }
        let gi = zi.map(sigmoid);
        let gf = zf.map(sigmoid);
        let gg = zc.map(f64::tanh);
        let go = zo.map(sigmoid);
        let mut c_next = Matrix::zeros(n, p);
        let mut h_next = Matrix::zeros(n, p);
        for r in 0..n {
            for j in 0..p {
                let cv = gf.at(r, j) * c.at(r, j) + gi.at(r, j) * gg.at(r, j);
                *c_next.at_mut(r, j) = cv;
                *h_next.at_mut(r, j) = go.at(r, j) * cv.tanh();
            }
        }
        c = c_next;
        h = h_next;
        gates.push(LstmGates { i: gi, f: gf, g: gg, o: go });
        cell.push(c.clone());
        hidden.push(h.clone());
    }
    let logits = h.matmul(&params.w_o.transposed());
    Ok(ForwardTrace::Lstm(LstmTrace { gates, cell, hidden, logits }))
}

/// The LMN that reproduces an Elman RNN exactly: `W_xh = V`, `W_mh = U`,
/// `W_hm = I`, `W_mm = 0`, readout copied. Its memory state equals the
/// RNN's hidden state at every timestep.
pub fn rnn_to_lmn(rnn: &RnnParams) -> LmnParams {
    let p = rnn.p();
    LmnParams {
        w_xh: rnn.v.clone(),
        w_mh: rnn.u.clone(),
        w_hm: Matrix::identity(p),
        w_mm: Matrix::zeros(p, p),
        w_o: rnn.w_o.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SplitMix64;

    fn random_steps(t: usize, n: usize, d: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = SplitMix64::new(seed);
        (0..t).map(|_| Matrix::from_fn(n, d, |_, _| rng.next_normal())).collect()
    }

    fn random_rnn(p: usize, d: usize, c: usize, seed: u64) -> RnnParams {
        let mut rng = SplitMix64::new(seed);
        RnnParams {
            v: Matrix::from_fn(p, d, |_, _| 0.5 * rng.next_normal()),
            u: Matrix::from_fn(p, p, |_, _| 0.5 * rng.next_normal()),
            w_o: Matrix::from_fn(c, p, |_, _| 0.5 * rng.next_normal()),
        }
    }

    #[test]
    fn linear_rnn_hand_example() {
        // T=2, d=p=1, A=[1], B=[0.5], W_o=[2], x=(1,1) -> m=(1, 1.5), y=3
        let params = LinearRnnParams {
            a: Matrix::from_rows(&[vec![1.0]]),
            b: Matrix::from_rows(&[vec![0.5]]),
            w_o: Matrix::from_rows(&[vec![2.0]]),
        };
        let steps = vec![Matrix::from_rows(&[vec![1.0]]), Matrix::from_rows(&[vec![1.0]])];
        let ForwardTrace::LinearRnn(trace) = linear_rnn_forward(&params, &steps).unwrap() else {
            unreachable!()
        };
        assert_eq!(trace.states[0].at(0, 0), 1.0);
        assert_eq!(trace.states[1].at(0, 0), 1.5);
        assert_eq!(trace.logits.at(0, 0), 3.0);
    }

    #[test]
    fn linear_rnn_zero_input_zero_logits() {
        let params = LinearRnnParams::zeros(3, 2, 4);
        let steps = vec![Matrix::zeros(2, 2); 5];
        let trace = linear_rnn_forward(&params, &steps).unwrap();
        assert_eq!(*trace.logits(), Matrix::zeros(2, 4));
    }

    #[test]
    fn rnn_hand_tanh() {
        let params = RnnParams {
            v: Matrix::from_rows(&[vec![1.0]]),
            u: Matrix::from_rows(&[vec![1.0]]),
            w_o: Matrix::from_rows(&[vec![1.0]]),
        };
        let steps = vec![Matrix::from_rows(&[vec![1.0]])];
        let ForwardTrace::Rnn(trace) = rnn_forward(&params, &steps).unwrap() else {
            unreachable!()
        };
        assert!((trace.hidden[0].at(0, 0) - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn rnn_linearizes_at_tiny_inputs() {
        let rnn = random_rnn(4, 3, 2, 1);
        let lin = LinearRnnParams { a: rnn.v.clone(), b: rnn.u.clone(), w_o: rnn.w_o.clone() };
        let steps: Vec<Matrix> = random_steps(6, 2, 3, 2)
            .into_iter()
            .map(|s| s.scaled(1e-4 / s.frobenius_norm()))
            .collect();
        let ForwardTrace::Rnn(tr) = rnn_forward(&rnn, &steps).unwrap() else { unreachable!() };
        let ForwardTrace::LinearRnn(tl) = linear_rnn_forward(&lin, &steps).unwrap() else {
            unreachable!()
        };
        for t in 0..6 {
            let denom = tl.states[t].frobenius_norm().max(1e-300);
            let diff = tr.hidden[t].sub(&tl.states[t]).frobenius_norm();
            assert!(diff / denom < 1e-8, "step {t}: relative {}", diff / denom);
        }
    }

    #[test]
    fn lmn_zero_input_no_memory_path_is_zero() {
        let mut params = LmnParams::zeros(3, 3, 2, 2);
        params.w_xh = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        params.w_hm = Matrix::identity(3);
        let steps = vec![Matrix::zeros(1, 2); 4];
        let ForwardTrace::Lmn(trace) = lmn_forward(&params, &steps).unwrap() else {
            unreachable!()
        };
        for t in 0..4 {
            assert_eq!(trace.hidden[t], Matrix::zeros(1, 3));
            assert_eq!(trace.memory[t], Matrix::zeros(1, 3));
        }
    }

    #[test]
    fn rnn_lmn_equivalence_on_random_draws() {
        for seed in 0..20 {
            let rnn = random_rnn(5, 3, 2, 1000 + seed);
            let lmn = rnn_to_lmn(&rnn);
            let steps = random_steps(7, 3, 3, 2000 + seed);
            let ForwardTrace::Rnn(tr) = rnn_forward(&rnn, &steps).unwrap() else {
                unreachable!()
            };
            let ForwardTrace::Lmn(tl) = lmn_forward(&lmn, &steps).unwrap() else {
                unreachable!()
            };
            for t in 0..7 {
                let dev = tl.memory[t].sub(&tr.hidden[t]).max_abs();
                assert!(dev <= 1e-12, "seed {seed} step {t}: deviation {dev}");
            }
            assert!(tl.logits.sub(&tr.logits).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn lstm_zero_weights_forget_bias_only_stays_zero() {
        let params = LstmParams::zeros(3, 2, 2);
        let steps = random_steps(5, 2, 2, 3);
        let ForwardTrace::Lstm(trace) = lstm_forward(&params, &steps).unwrap() else {
            unreachable!()
        };
        for t in 0..5 {
            assert_eq!(trace.cell[t], Matrix::zeros(2, 3));
            assert_eq!(trace.hidden[t], Matrix::zeros(2, 3));
        }
    }

    #[test]
    fn lstm_saturated_forget_keeps_cell_constant() {
        // Forget gate driven to 1 (huge bias), input gate to 0 (huge
        // negative bias): the cell never changes from its first value.
        let p = 2;
        let mut params = LstmParams::zeros(p, 1, 1);
        for j in 0..p {
            *params.b_f.at_mut(0, j) = 50.0;
            *params.b_i.at_mut(0, j) = -50.0;
        }
        let steps = random_steps(6, 1, 1, 4);
        let ForwardTrace::Lstm(trace) = lstm_forward(&params, &steps).unwrap() else {
            unreachable!()
        };
        for t in 1..6 {
            let drift = trace.cell[t].sub(&trace.cell[0]).max_abs();
            assert!(drift < 1e-12, "step {t} drift {drift}");
        }
    }

    #[test]
    fn lstm_single_step_hand_computation() {
        // One unit, one input, hand-set weights.
        let mut params = LstmParams::zeros(1, 1, 1);
        *params.w_i.at_mut(0, 0) = 0.5; // on x
        *params.w_f.at_mut(0, 0) = -0.25;
        *params.w_c.at_mut(0, 0) = 1.5;
        *params.w_og.at_mut(0, 0) = 0.75;
        *params.b_i.at_mut(0, 0) = 0.1;
        *params.b_f.at_mut(0, 0) = 1.0;
        *params.b_c.at_mut(0, 0) = -0.2;
        *params.b_og.at_mut(0, 0) = 0.3;
        *params.w_o.at_mut(0, 0) = 2.0;
        let x = 0.8;
        let steps = vec![Matrix::from_rows(&[vec![x]])];
        let ForwardTrace::Lstm(trace) = lstm_forward(&params, &steps).unwrap() else {
            unreachable!()
        };
        let gi = 1.0 / (1.0 + (-(0.5 * x + 0.1)).exp());
        let gg = (1.5 * x - 0.2_f64).tanh();
        let go = 1.0 / (1.0 + (-(0.75 * x + 0.3)).exp());
        let c = gi * gg; // f * c0 = 0
        let h = go * c.tanh();
        assert!((trace.cell[0].at(0, 0) - c).abs() < 1e-12);
        assert!((trace.hidden[0].at(0, 0) - h).abs() < 1e-12);
        assert!((trace.logits.at(0, 0) - 2.0 * h).abs() < 1e-12);
    }

    #[test]
    fn trace_logits_recomputable_from_states() {
        let rnn = random_rnn(4, 2, 3, 9);
        let steps = random_steps(5, 3, 2, 10);
        let ForwardTrace::Rnn(trace) = rnn_forward(&rnn, &steps).unwrap() else {
            unreachable!()
        };
        let recomputed = trace.hidden[4].matmul(&rnn.w_o.transposed());
        assert_eq!(recomputed, trace.logits);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let rnn = random_rnn(4, 2, 3, 9);
        let steps = random_steps(5, 3, 7, 10);
        assert!(matches!(
            rnn_forward(&rnn, &steps),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(matches!(rnn_forward(&rnn, &[]), Err(ModelError::EmptyInput)));
    }
}
