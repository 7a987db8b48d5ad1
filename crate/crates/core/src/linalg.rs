//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const EIGEN_MAX_ITER: usize = 100_000;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
///
/// Returns `(values, vectors)` with `m ≈ vectors · diag(values) · vectorsᴴ`.
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("eigendecomposition of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(hermitian_part(m), f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::Eigen)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    Ok((values, vectors))
}

/// `U · diag(d) · Uᴴ`
pub fn reconstruct(u: &CMat, d: &[f64]) -> CMat {
    let mut scaled = u.clone();
    for (j, &x) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(x);
    }
    &scaled * u.adjoint()
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMat) -> Result<f64> {
    let (values, _) = hermitian_eigen(m)?;
    Ok(values.last().copied().unwrap_or(0.0))
}

/// PSD check: every eigenvalue ≥ `-rel_tol · max(trace, 0)`, and Hermitian
/// to `rel_tol` in relative Frobenius norm.
pub fn is_psd(m: &CMat, rel_tol: f64) -> Result<bool> {
    let norm = m.norm();
    if norm == 0.0 {
        return Ok(true);
    }
    if (m - m.adjoint()).norm() > rel_tol * norm {
        return Ok(false);
    }
    let scale = trace_re(m).abs().max(norm);
    Ok(min_eigenvalue(m)? >= -rel_tol * scale)
}

/// Principal square root of a Hermitian PSD matrix. Negative eigenvalues
/// within `1e-10 · trace` are clamped to zero; larger ones are an error.
pub fn hermitian_sqrt(m: &CMat) -> Result<CMat> {
    let (values, u) = hermitian_eigen(m)?;
    let trace = trace_re(m);
    let tol = 1e-10 * trace.abs().max(f64::MIN_POSITIVE);
    if let Some(&min_eig) = values.last() {
        if min_eig < -tol {
            return Err(Error::NotPsd { min_eig, trace });
        }
    }
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(reconstruct(&u, &roots))
}

/// Solve `a · x = b` for Hermitian positive definite `a`.
pub fn hpd_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let chol = Cholesky::new(hermitian_part(a)).ok_or(Error::Singular("Cholesky factorization"))?;
    Ok(chol.solve(b))
}

pub fn hpd_solve_vec(a: &CMat, b: &CVec) -> Result<CVec> {
    let chol = Cholesky::new(hermitian_part(a)).ok_or(Error::Singular("Cholesky factorization"))?;
    Ok(chol.solve(b))
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute norm when `b` is zero.
pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}

/// Block-diagonal matrix from equally sized square blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(total, total);
    let mut offset = 0;
    for b in blocks {
        let n = b.nrows();
        out.view_mut((offset, offset), (n, n)).copy_from(b);
        offset += n;
    }
    out
}

pub fn cosine_similarity(a: &CVec, b: &CVec) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dotc(b).norm() / (na * nb)
}
