//! Small dense symmetric helpers: Cholesky factorization, solves, and the
//! inverse diagonal needed for Wald standard errors. Kept in-crate because the
//! matrices involved are modest (p up to the hundreds) and the failure mode
//! (non-positive-definite information) must be reported, not panicked on.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `A x = b` given the Cholesky factor `l` of `A`.
pub fn cholesky_solve(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Diagonal of `A^{-1}` given the Cholesky factor `l` of `A`.
///
/// Column `j` of `L^{-1}` is computed by forward substitution; the diagonal
/// entry `(A^{-1})_{jj}` with `A^{-1} = L^{-T} L^{-1}` is that column's
/// squared norm.
pub fn cholesky_inverse_diagonal(l: ArrayView2<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut diag = Array1::<f64>::zeros(n);
    let mut col = vec![0.0f64; n];
    for j in 0..n {
        col[j] = 1.0 / l[[j, j]];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        diag[j] = col[j..].iter().map(|c| c * c).sum();
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn factor_solve_roundtrip() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let b = array![1.0, -2.0, 0.3];
        let l = cholesky(a.view()).unwrap();
        let x = cholesky_solve(l.view(), b.view());
        let back = a.dot(&x);
        for (u, v) in back.iter().zip(b.iter()) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_diagonal_matches_solves() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let l = cholesky(a.view()).unwrap();
        let diag = cholesky_inverse_diagonal(l.view());
        for j in 0..3 {
            let mut e = Array1::<f64>::zeros(3);
            e[j] = 1.0;
            let col = cholesky_solve(l.view(), e.view());
            assert_relative_eq!(diag[j], col[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_none());
    }
}
