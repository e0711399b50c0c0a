//! Dense factorizations: Cholesky, SPD solves and symmetric eigendecomposition.

use nalgebra::DMatrix;

use super::{Matrix, NumericsError};

/// Default pivot tolerance, relative to the largest diagonal entry.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-12;

/// Relative asymmetry accepted by [`cholesky`].
const SYMMETRY_TOL: f64 = 1e-9;

/// Lower Cholesky factor `L` with `L·Lᵀ = m` and a positive diagonal.
///
/// `tol` is relative to the largest diagonal entry of `m`: a pivot at or
/// below `tol · max_diag` is reported as [`NumericsError::NotSpd`].
pub fn cholesky(m: &Matrix, tol: f64) -> Result<Matrix, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(NumericsError::NotSymmetric);
            }
        }
    }
    let max_diag = (0..n).map(|i| m.get(i, i)).fold(0.0_f64, f64::max);
    let threshold = tol * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for p in 0..j {
            d -= l.get(j, p) * l.get(j, p);
        }
        if d <= threshold || d <= 0.0 {
            return Err(NumericsError::NotSpd { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `L·y = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l.get(i, p) * y[p];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

/// Solves `Lᵀ·x = y` for lower-triangular `L`.
pub fn solve_lower_transposed(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in (i + 1)..n {
            s -= l.get(p, i) * x[p];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// Solves `m·x = b` for symmetric positive definite `m`.
pub fn solve_spd(m: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if b.len() != m.rows() {
        return Err(NumericsError::DimensionMismatch {
            expected: m.rows(),
            got: b.len(),
        });
    }
    let l = cholesky(m, DEFAULT_PIVOT_TOL)?;
    Ok(solve_lower_transposed(&l, &solve_lower(&l, b)))
}

/// Solves `m·X = B` column by column.
pub fn solve_spd_matrix(m: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let l = cholesky(m, DEFAULT_PIVOT_TOL)?;
    let bt = b.transpose();
    let mut cols = Vec::with_capacity(b.cols());
    for j in 0..b.cols() {
        cols.push(solve_lower_transposed(&l, &solve_lower(&l, bt.row(j))));
    }
    Ok(Matrix::from_rows(&cols)?.transpose())
}

/// Inverse of an SPD matrix, symmetrized.
pub fn inverse_spd(m: &Matrix) -> Result<Matrix, NumericsError> {
    Ok(solve_spd_matrix(m, &Matrix::identity(m.rows()))?.symmetrize())
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues and
/// the matching eigenvectors as columns.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix), NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(&m.symmetrize()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// are clamped at zero.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix, NumericsError> {
    let (vals, vecs) = symmetric_eigen(m)?;
    let n = vals.len();
    let roots: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        (0..n).map(|p| vecs.get(i, p) * roots[p] * vecs.get(j, p)).sum()
    }))
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let svd = nalgebra::SVD::new(to_nalgebra(m), false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values at or above `rel_tol · σ_max`.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v >= rel_tol * smax).count()
}
