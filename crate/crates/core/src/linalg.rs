//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Largest dimension for which the spectral norm is taken from a full SVD.
pub const SVD_LIMIT: usize = 64;
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 10_000;

/// Spectral norm (largest singular value).
///
/// Uses a full SVD up to [`SVD_LIMIT`] rows/columns and power iteration on
/// `MᵀM` beyond that.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows().max(m.ncols()) <= SVD_LIMIT {
        m.singular_values().max()
    } else {
        power_iteration_norm(m, POWER_TOL, POWER_MAX_ITER)
    }
}

/// Spectral norm by power iteration on `MᵀM`, starting from the all-ones vector.
pub fn power_iteration_norm(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let w = m.tr_mul(&(m * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let next = (m * &v).norm();
        if (next - sigma).abs() <= tol * next.max(1.0) {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Diagonal matrix with the given entries.
pub fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(entries))
}

/// Row-major matrix–vector product with a fixed summation order.
///
/// The inpainting loops rely on this to make results bit-identical across
/// model layouts that differ only by an all-zero trailing column.
pub fn matvec(m: &DMatrix<f64>, x: &[f64]) -> DVector<f64> {
    debug_assert_eq!(m.ncols(), x.len());
    DVector::from_iterator(
        m.nrows(),
        (0..m.nrows()).map(|i| {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += m[(i, j)] * xj;
            }
            acc
        }),
    )
}

/// Integer matrix power by repeated multiplication.
pub fn mat_pow(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}
