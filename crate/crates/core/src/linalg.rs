//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalue floor for positive semidefinite checks.
pub const PSD_TOL: f64 = -1e-9;
/// Eigenvalue floor for positive definite checks.
pub const PD_TOL: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// ‖M − Mᵀ‖_F / ‖M‖_F, zero for the zero matrix.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= PSD_TOL
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= PD_TOL
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

pub fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Factor `F` with `F·Fᵀ = cov` for a symmetric PSD matrix; tolerates singular
/// covariances by clamping tiny negative eigenvalues to zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(cov).symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

/// Solves `S·X = rhs` for symmetric positive definite `S` via Cholesky.
pub fn solve_spd(s: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &'static str, step: usize) -> Result<DMatrix<f64>> {
    match symmetrize(s).cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(Error::NotPositiveDefinite {
            what,
            step,
            min_eigenvalue: min_eigenvalue(s),
        }),
    }
}

pub fn check_shape(what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dims(what, (rows, cols), m.shape()));
    }
    Ok(())
}

pub fn check_len(what: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dims(what, (len, 1), (v.len(), 1)));
    }
    Ok(())
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from row-major nested rows. `cols_hint` fixes the column
/// count for matrices with zero rows.
pub fn from_rows(what: &str, rows: &[Vec<f64>], cols_hint: usize) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(cols_hint, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::dims(what, (rows.len(), cols), (rows.len(), bad.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
