//! Householder QR with explicit thin-Q formation.

use super::matrix::Matrix;

/// Thin QR factorization `a = q * r` with `q` of shape m x min(m, n)
/// and orthonormal columns, `r` upper triangular min(m, n) x n.
///
/// Columns of `q` are sign-fixed so the diagonal of `r` is
/// non-negative, which makes the factorization unique (hence
/// deterministic) for full-rank input.
pub fn qr_thin(a: &Matrix) -> (Matrix, Matrix) {
    let m = a.rows();
    let n = a.cols();
    let k = m.min(n);
    let mut r = a.clone();
    // Householder vectors, one per reflection, stored full-length.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        // Build the reflector for column j below the diagonal.
        let mut norm2 = 0.0;
        for i in j..m {
            let x = r.at(i, j);
            norm2 += x * x;
        }
        let norm = norm2.sqrt();
        let mut v = vec![0.0; m];
        if norm > 0.0 {
            let x0 = r.at(j, j);
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            v[j] = x0 - alpha;
            for i in j + 1..m {
                v[i] = r.at(i, j);
            }
            let vnorm2: f64 = v[j..].iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                let inv = 1.0 / vnorm2.sqrt();
                for x in &mut v[j..] {
                    *x *= inv;
                }
                // r <- (I - 2 v v^T) r
                for col in j..n {
                    let mut dot = 0.0;
                    for i in j..m {
                        dot += v[i] * r.at(i, col);
                    }
                    let dot2 = 2.0 * dot;
                    for i in j..m {
                        *r.at_mut(i, col) -= dot2 * v[i];
                    }
                }
            }
        }
        vs.push(v);
    }

    // Form thin Q by applying the reflectors to the first k columns of I.
    let mut q = Matrix::zeros(m, k);
    for j in 0..k {
        *q.at_mut(j, j) = 1.0;
    }
    for (idx, v) in vs.iter().enumerate().rev() {
        for col in 0..k {
            let mut dot = 0.0;
            for i in idx..m {
                dot += v[i] * q.at(i, col);
            }
            let dot2 = 2.0 * dot;
            for i in idx..m {
                *q.at_mut(i, col) -= dot2 * v[i];
            }
        }
    }

    // Sign fix: make diag(r) >= 0.
    let mut r_out = Matrix::zeros(k, n);
    for i in 0..k {
        for j in 0..n {
            *r_out.at_mut(i, j) = r.at(i, j);
        }
    }
    for i in 0..k {
        if r_out.at(i, i) < 0.0 {
            for j in 0..n {
                *r_out.at_mut(i, j) = -r_out.at(i, j);
            }
            for rr in 0..m {
                *q.at_mut(rr, i) = -q.at(rr, i);
            }
        }
    }
    (q, r_out)
}
