//! Small dense linear-algebra helpers shared by the family, the targets and the harness.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Zero the strict upper triangle.
pub fn tril(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    let n = out.nrows();
    for j in 0..out.ncols() {
        for i in 0..j.min(n) {
            out[(i, j)] = 0.0;
        }
    }
    out
}

/// `(X + Xᵀ) / 2`, exactly symmetric entry by entry.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = x[(i, i)];
        for j in 0..i {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn is_lower_triangular(x: &DMatrix<f64>) -> bool {
    (0..x.ncols()).all(|j| (0..j.min(x.nrows())).all(|i| x[(i, j)] == 0.0))
}

pub fn is_symmetric(x: &DMatrix<f64>) -> bool {
    x.is_square() && (0..x.nrows()).all(|i| (0..i).all(|j| x[(i, j)] == x[(j, i)]))
}

/// Symmetric eigendecomposition of an (assumed symmetric) matrix.
pub fn sym_eigen(x: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    SymmetricEigen::new(symmetrize(x))
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_eig_range(x: &DMatrix<f64>) -> (f64, f64) {
    let e = sym_eigen(x);
    let lo = e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn spd_cholesky(x: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !x.is_square() {
        return Err(Error::arg(format!("{what} must be square, got {}x{}", x.nrows(), x.ncols())));
    }
    if !is_symmetric(x) {
        // tolerate round-off asymmetry in user input, but nothing larger
        let asym = (x - x.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + x.abs().max()) {
            return Err(Error::arg(format!("{what} is not symmetric")));
        }
    }
    Cholesky::new(symmetrize(x)).ok_or_else(|| Error::arg(format!("{what} is not positive definite")))
}

/// Inverse of an SPD matrix, via its Cholesky factor.
pub fn spd_inverse(x: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_cholesky(x, what)?.inverse()))
}

/// Principal square root of an SPD matrix, exactly symmetric.
pub fn spd_sqrt(x: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(x);
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    symmetrize(&(&e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()))
}

/// Squared Frobenius norm.
pub fn fro_sq(x: &DMatrix<f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn vec_sq(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Frobenius inner product.
pub fn fro_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Build a dense matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::arg(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}
