//! Truncated singular value decomposition.
//!
//! The factor convention follows the autoencoder construction: for an
//! input `m` of shape N x D, `truncated_svd` returns `v` (N x k), `s`,
//! and `u` (D x k) with `m ~ v * diag(s) * u^T`. The row-space factor
//! `u` is the one the sequence autoencoder is built from.
//!
//! Two routes produce the factors:
//!
//! * Gram route (default, min dimension <= 2000): eigendecompose the
//!   Gram matrix on the short side, then polish with a QR step and an
//!   exact one-sided Jacobi SVD of the small projected matrix. The
//!   polish restores the orthonormality the squared condition number
//!   would otherwise cost.
//! * Randomized route (larger inputs): a seeded Gaussian range finder
//!   with two power iterations, then the same small-matrix finish. The
//!   internal seed is fixed, so results are deterministic.

use super::eigen::symmetric_eigen;
use super::matrix::Matrix;
use super::qr::qr_thin;
use super::rng::SplitMix64;
use super::NumericsError;

/// Largest short-side dimension handled by the Gram route.
pub(crate) const GRAM_ROUTE_LIMIT: usize = 2000;

/// Seed for the randomized range finder; fixed so repeated calls on
/// the same matrix give identical factors.
const RANGE_FINDER_SEED: u64 = 0x5eed_0f_ab5_01;

/// Oversampling columns for the randomized range finder.
const OVERSAMPLE: usize = 10;

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Row-space factor, D x k, orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending, non-negative.
    pub s: Vec<f64>,
    /// Column-space factor, N x k, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `v * diag(s) * u^T`, the rank-k approximation of the input.
    pub fn reconstruct(&self) -> Matrix {
        let mut vs = self.v.clone();
        for j in 0..self.s.len() {
            for i in 0..vs.rows() {
                *vs.at_mut(i, j) *= self.s[j];
            }
        }
        vs.matmul(&self.u.transposed())
    }
}

/// Top-k singular triplets of a dense matrix.
pub fn truncated_svd(m: &Matrix, k: usize) -> Result<SvdResult, NumericsError> {
    let (n, d) = (m.rows(), m.cols());
    if !m.all_finite() {
        return Err(NumericsError::NonFinite { context: "truncated_svd input" });
    }
    if k == 0 || k > n.min(d) {
        return Err(NumericsError::RankOutOfRange { k, max: n.min(d) });
    }
    let result = if n.min(d) <= GRAM_ROUTE_LIMIT {
        gram_route(m, k)
    } else {
        randomized_route(m, k)
    };
    Ok(fix_signs(result))
}

/// Gram-matrix route, exposed for tests that pit it against the
/// randomized route on the same input.
pub(crate) fn gram_route(m: &Matrix, k: usize) -> SvdResult {
    let (n, d) = (m.rows(), m.cols());
    if d <= n {
        // Gram on the column side: G = m^T m.
        let gram = m.matmul_tn(m);
        let (_, vectors) = symmetric_eigen(&gram);
        let mut u0 = Matrix::zeros(d, k);
        for j in 0..k {
            for i in 0..d {
                *u0.at_mut(i, j) = vectors.at(i, j);
            }
        }
        let w = m.matmul(&u0);
        let (q, _) = qr_thin(&w);
        let b = q.matmul_tn(m); // k x d
        finish_from_projection(&q, &b, k)
    } else {
        let t = m.transposed();
        let r = gram_route(&t, k);
        SvdResult { u: r.v, s: r.s, v: r.u }
    }
}

/// Randomized range finder route for matrices whose short side is too
/// large to eigendecompose densely.
pub(crate) fn randomized_route(m: &Matrix, k: usize) -> SvdResult {
    let (n, d) = (m.rows(), m.cols());
    let l = (k + OVERSAMPLE).min(n.min(d));
    let mut rng = SplitMix64::new(RANGE_FINDER_SEED);
    let omega = Matrix::from_fn(d, l, |_, _| rng.next_normal());
    let y = m.matmul(&omega);
    let (mut q, _) = qr_thin(&y);
    // Two power iterations sharpen the captured subspace.
    for _ in 0..2 {
        let z = m.matmul_tn(&q); // d x l
        let (qz, _) = qr_thin(&z);
        let y2 = m.matmul(&qz);
        let (q2, _) = qr_thin(&y2);
        q = q2;
    }
    let b = q.matmul_tn(m); // l x d
    let full = finish_from_projection(&q, &b, l);
    // Truncate the oversampled factors to k.
    let mut u = Matrix::zeros(d, k);
    let mut v = Matrix::zeros(n, k);
    for j in 0..k {
        for i in 0..d {
            *u.at_mut(i, j) = full.u.at(i, j);
        }
        for i in 0..n {
            *v.at_mut(i, j) = full.v.at(i, j);
        }
    }
    SvdResult { u, s: full.s[..k].to_vec(), v }
}

/// Given an orthonormal range basis `q` (N x r) and the projection
/// `b = q^T m` (r x D), compute the SVD of `q * b` exactly via
/// one-sided Jacobi on `b^T`.
fn finish_from_projection(q: &Matrix, b: &Matrix, k: usize) -> SvdResult {
    let bt = b.transposed(); // D x r
    let (left, sigma, rot) = jacobi_svd_columns(&bt);
    // b^T = left * diag(sigma) * rot^T, so b = rot * diag(sigma) * left^T
    // and m ~ q * b = (q * rot) * diag(sigma) * left^T.
    let v_full = q.matmul(&rot);
    let (dd, _) = (left.rows(), left.cols());
    let mut u = Matrix::zeros(dd, k);
    let mut v = Matrix::zeros(v_full.rows(), k);
    for j in 0..k {
        for i in 0..dd {
            *u.at_mut(i, j) = left.at(i, j);
        }
        for i in 0..v_full.rows() {
            *v.at_mut(i, j) = v_full.at(i, j);
        }
    }
    SvdResult { u, s: sigma[..k].to_vec(), v }
}

/// One-sided Jacobi SVD of `x` (m x n): returns `(l, sigma, j)` with
/// `x = l * diag(sigma) * j^T`, `l` having orthonormal columns (zero
/// singular directions completed from the canonical basis), `sigma`
/// descending, and `j` orthogonal n x n.
pub(crate) fn jacobi_svd_columns(x: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = (x.rows(), x.cols());
    let mut u = x.clone();
    let mut j = Matrix::identity(n);
    if n > 1 {
        const MAX_SWEEPS: usize = 60;
        let tol = 1e-15;
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        let a = u.at(i, p);
                        let b = u.at(i, q);
                        alpha += a * a;
                        beta += b * b;
                        gamma += a * b;
                    }
                    if gamma * gamma <= tol * tol * alpha * beta || gamma == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let theta = (beta - alpha) / (2.0 * gamma);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for i in 0..m {
                        let a = u.at(i, p);
                        let b = u.at(i, q);
                        *u.at_mut(i, p) = c * a - s * b;
                        *u.at_mut(i, q) = s * a + c * b;
                    }
                    for i in 0..n {
                        let a = j.at(i, p);
                        let b = j.at(i, q);
                        *j.at_mut(i, p) = c * a - s * b;
                        *j.at_mut(i, q) = s * a + c * b;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }

    // Column norms are the singular values; sort descending.
    let mut norms: Vec<(usize, f64)> = (0..n)
        .map(|col| {
            let mut acc = 0.0;
            for i in 0..m {
                let v = u.at(i, col);
                acc += v * v;
            }
            (col, acc.sqrt())
        })
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let sigma_max = norms.first().map(|x| x.1).unwrap_or(0.0);
    let zero_cut = sigma_max * 1e-15;

    let mut left = Matrix::zeros(m, n);
    let mut rot = Matrix::zeros(n, n);
    let mut sigma = vec![0.0; n];
    let mut kept: Vec<usize> = Vec::new(); // output columns with real directions
    for (out_col, &(src_col, norm)) in norms.iter().enumerate() {
        sigma[out_col] = norm;
        for i in 0..n {
            *rot.at_mut(i, out_col) = j.at(i, src_col);
        }
        if norm > zero_cut && norm > 0.0 {
            let inv = 1.0 / norm;
            for i in 0..m {
                *left.at_mut(i, out_col) = u.at(i, src_col) * inv;
            }
            kept.push(out_col);
        } else {
            sigma[out_col] = 0.0;
        }
    }

    // Complete null directions with canonical vectors orthogonalized
    // against everything kept so far (deterministic scan order).
    for out_col in 0..n {
        if kept.contains(&out_col) {
            continue;
        }
        let mut filled = false;
        for cand in 0..m {
            let mut v = vec![0.0; m];
            v[cand] = 1.0;
            for &kc in &kept {
                let mut proj = 0.0;
                for i in 0..m {
                    proj += v[i] * left.at(i, kc);
                }
                for i in 0..m {
                    v[i] -= proj * left.at(i, kc);
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                let inv = 1.0 / norm;
                for i in 0..m {
                    *left.at_mut(i, out_col) = v[i] * inv;
                }
                kept.push(out_col);
                filled = true;
                break;
            }
        }
        debug_assert!(filled, "could not complete orthonormal basis");
    }

    (left, sigma, rot)
}

/// Make the largest-magnitude entry of each `u` column positive,
/// flipping the matching `v` column to preserve the product.
fn fix_signs(mut r: SvdResult) -> SvdResult {
    for j in 0..r.s.len() {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for i in 0..r.u.rows() {
            let a = r.u.at(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if r.u.at(best, j) < 0.0 {
            for i in 0..r.u.rows() {
                *r.u.at_mut(i, j) = -r.u.at(i, j);
            }
            for i in 0..r.v.rows() {
                *r.v.at_mut(i, j) = -r.v.at(i, j);
            }
        }
    }
    r
}
