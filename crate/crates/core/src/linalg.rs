//! Dense symmetric linear algebra on row-major buffers.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order; column `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Views a row-major `n × n` buffer as a matrix.
pub fn to_matrix(n: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, entries)
}

/// Row-major copy of a matrix.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Copies the upper triangle onto the lower one so the result is bit-exactly symmetric.
pub fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)];
        }
    }
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::shape(format!("eigensolver needs a square matrix, got {}x{}", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix passed to the eigensolver has non-finite entries".into()));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        return Err(Error::Numerical(format!(
            "symmetric eigensolver did not converge (n = {n}, max |entry| = {scale:e})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

impl SymEigen {
    /// `U f(Λ) Uᵀ`, symmetrized from its upper triangle.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for k in 0..n {
            let s = f(self.values[k]);
            for i in 0..n {
                scaled[(i, k)] *= s;
            }
        }
        let mut out = &scaled * self.vectors.transpose();
        symmetrize_upper(&mut out);
        out
    }
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let e = sym_eigen(m)?;
    Ok(e.values.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let gram = m.transpose() * m;
    Ok(libm::sqrt(sym_spectral_norm(&gram)?.max(0.0)))
}
