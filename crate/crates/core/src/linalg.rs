//! Dense helpers shared by the design and estimator modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Rank decisions use the
//! singular values with a threshold relative to the largest one; symmetric
//! functions (inverse, square root, inverse square root) go through the
//! symmetric eigendecomposition so their results are symmetric by
//! construction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value threshold for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Eigenvalue floor for symmetric inverse square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (row, col) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::Input(format!("{what} has a non-finite entry at ({row}, {col})")));
    }
    Ok(())
}

/// Numerical rank with singular values below `RANK_TOLERANCE * s_max` treated as zero.
pub fn numerical_rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// Averages a square matrix with its transpose. The result is exactly symmetric.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Applies `f` to the eigenvalues of a symmetric matrix and rebuilds `U f(Λ) U'`.
fn spectral_map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = SymmetricEigen::new(m.clone());
    let u = &eig.eigenvectors;
    let mapped = Vector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let mut out = u * Matrix::from_diagonal(&mapped) * u.transpose();
    symmetrize(&mut out);
    out
}

fn eigen_range(m: &Matrix) -> (f64, f64) {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Checks that a symmetric matrix is numerically positive definite.
pub fn ensure_positive_definite(m: &Matrix, what: &str) -> Result<()> {
    let (min, max) = eigen_range(m);
    if !(min > EIGEN_FLOOR * max.abs().max(1.0)) {
        return Err(Error::Design(format!(
            "{what} is not positive definite (eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    ensure_positive_definite(m, what)?;
    let mut inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Design(format!("{what} is singular")))?;
    symmetrize(&mut inv);
    Ok(inv)
}

/// Moore-Penrose inverse of a symmetric positive semidefinite matrix.
pub fn psd_pinv(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cut = RANK_TOLERANCE * max;
    spectral_map(m, |l| if l > cut && l > 0.0 { 1.0 / l } else { 0.0 })
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn sym_sqrt(m: &Matrix) -> Matrix {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &Matrix, what: &str) -> Result<Matrix> {
    ensure_positive_definite(m, what)?;
    Ok(spectral_map(m, |l| 1.0 / l.sqrt()))
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Identity minus `m`.
pub fn complement(m: &Matrix) -> Matrix {
    Matrix::identity(m.nrows(), m.ncols()) - m
}

/// Block-diagonal stacking of column vectors `1_{n_i}`.
pub fn group_indicator(group_sizes: &[usize]) -> Matrix {
    let n: usize = group_sizes.iter().sum();
    let mut a = Matrix::zeros(n, group_sizes.len());
    let mut row = 0;
    for (g, &size) in group_sizes.iter().enumerate() {
        for _ in 0..size {
            a[(row, g)] = 1.0;
            row += 1;
        }
    }
    a
}
