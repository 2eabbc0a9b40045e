//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Jacobi is slower than tridiagonalization-based solvers but computes
//! small eigenvalues of Gram matrices to high relative accuracy and is
//! exactly deterministic, which the closed-form autoencoder fit and
//! the checkpoint reproducibility guarantees depend on.

use super::matrix::Matrix;

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns `(values, vectors)` with eigenvalues sorted descending and
/// the eigenvector for `values[i]` in column `i` of `vectors`, so that
/// `a = vectors * diag(values) * vectors^T`.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    assert_eq!(a.rows(), a.cols(), "symmetric_eigen needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    if n <= 1 {
        return (vec![if n == 1 { m.at(0, 0) } else { 0.0 }; n], v);
    }

    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return (vec![0.0; n], v);
    }
    let stop = norm * 1e-15;

    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&m);
        if off <= stop {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() <= stop / (n as f64) {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude root keeps rotations stable.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());

    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            *vectors.at_mut(r, new_col) = v.at(r, old_col);
        }
    }
    (values, vectors)
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let x = m.at(i, j);
            acc += 2.0 * x * x;
        }
    }
    acc.sqrt()
}

/// Apply the two-sided rotation J^T M J on rows/columns p and q.
fn rotate(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    let app = m.at(p, p);
    let aqq = m.at(q, q);
    let apq = m.at(p, q);

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m.at(k, p);
        let akq = m.at(k, q);
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        *m.at_mut(k, p) = new_kp;
        *m.at_mut(p, k) = new_kp;
        *m.at_mut(k, q) = new_kq;
        *m.at_mut(q, k) = new_kq;
    }
    *m.at_mut(p, p) = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    *m.at_mut(q, q) = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    *m.at_mut(p, q) = 0.0;
    *m.at_mut(q, p) = 0.0;
}

/// Apply the rotation to columns p and q (eigenvector accumulation).
fn rotate_columns(v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..v.rows() {
        let vkp = v.at(k, p);
        let vkq = v.at(k, q);
        *v.at_mut(k, p) = c * vkp - s * vkq;
        *v.at_mut(k, q) = s * vkp + c * vkq;
    }
}
