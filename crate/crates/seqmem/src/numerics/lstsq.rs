//! Linear least squares with optional ridge damping.

use super::eigen::symmetric_eigen;
use super::matrix::Matrix;
use super::NumericsError;

/// Solve `min_W ||inputs * W - targets||^2 (+ ridge * ||W||^2)` for the
/// coefficient matrix `W` (d x c).
///
/// With `ridge = 0` rank-deficient normal equations fall back to the
/// pseudoinverse: eigenvalues of the Gram matrix below a scale-aware
/// cutoff are treated as exact zeros, which picks the minimum-norm
/// solution instead of amplifying noise.
pub fn least_squares_fit(
    inputs: &Matrix,
    targets: &Matrix,
    ridge: f64,
) -> Result<Matrix, NumericsError> {
    if inputs.rows() != targets.rows() {
        return Err(NumericsError::DimensionMismatch {
            context: "least_squares_fit: inputs and targets disagree on row count",
            expected: inputs.rows(),
            got: targets.rows(),
        });
    }
    if inputs.rows() == 0 {
        return Err(NumericsError::DimensionMismatch {
            context: "least_squares_fit: need at least one row",
            expected: 1,
            got: 0,
        });
    }
    if !inputs.all_finite() || !targets.all_finite() || !ridge.is_finite() || ridge < 0.0 {
        return Err(NumericsError::NonFinite { context: "least_squares_fit input" });
    }

    let d = inputs.cols();
    let gram = inputs.matmul_tn(inputs); // d x d
    let rhs = inputs.matmul_tn(targets); // d x c
    let (eigenvalues, vectors) = symmetric_eigen(&gram);

    // Spectral filter: 1/(lambda + ridge), or pseudoinverse cutoff.
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = lambda_max * (inputs.rows().max(d) as f64) * f64::EPSILON * 8.0;
    let mut projected = vectors.matmul_tn(&rhs); // d x c, rows in eigenbasis
    for (i, &lambda) in eigenvalues.iter().enumerate() {
        let f = if ridge > 0.0 {
            1.0 / (lambda.max(0.0) + ridge)
        } else if lambda > cutoff && lambda > 0.0 {
            1.0 / lambda
        } else {
            0.0
        };
        for j in 0..projected.cols() {
            *projected.at_mut(i, j) *= f;
        }
    }
    Ok(vectors.matmul(&projected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SplitMix64;

    #[test]
    fn identity_inputs_reproduce_targets() {
        let t = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let w = least_squares_fit(&Matrix::identity(3), &t, 0.0).unwrap();
        assert!(w.sub(&t).frobenius_norm() < 1e-12);
    }

    #[test]
    fn recovers_planted_coefficients() {
        let mut rng = SplitMix64::new(9);
        let x = Matrix::from_fn(40, 5, |_, _| rng.next_normal());
        let w_true = Matrix::from_fn(5, 3, |i, j| (i + j) as f64 * 0.25 - 0.5);
        let y = x.matmul(&w_true);
        let w = least_squares_fit(&x, &y, 0.0).unwrap();
        assert!(w.sub(&w_true).frobenius_norm() < 1e-9);
    }

    #[test]
    fn huge_ridge_shrinks_solution() {
        let mut rng = SplitMix64::new(10);
        let x = Matrix::from_fn(30, 4, |_, _| rng.next_normal());
        let y = Matrix::from_fn(30, 2, |_, _| rng.next_normal());
        let w0 = least_squares_fit(&x, &y, 0.0).unwrap();
        let w = least_squares_fit(&x, &y, 1e12).unwrap();
        assert!(w.frobenius_norm() < 1e-6 * w0.frobenius_norm().max(1.0));
    }

    #[test]
    fn duplicated_column_gets_minimum_norm_split() {
        // Two identical columns: the pseudoinverse splits the weight
        // evenly instead of blowing up.
        let mut rng = SplitMix64::new(11);
        let base = Matrix::from_fn(50, 1, |_, _| rng.next_normal());
        let x = Matrix::from_fn(50, 2, |i, _| base.at(i, 0));
        let y = base.clone();
        let w = least_squares_fit(&x, &y, 0.0).unwrap();
        assert!((w.at(0, 0) - 0.5).abs() < 1e-8, "w00 = {}", w.at(0, 0));
        assert!((w.at(1, 0) - 0.5).abs() < 1e-8, "w10 = {}", w.at(1, 0));
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let x = Matrix::identity(3);
        let y = Matrix::zeros(4, 1);
        assert!(matches!(
            least_squares_fit(&x, &y, 0.0),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }
}
