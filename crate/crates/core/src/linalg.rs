//! Complex dense linear-algebra aliases and the few helpers the solvers share.

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Real part of `tr(A^H B)`, the real inner product used on matrix spaces.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Solves `A X = B` for Hermitian positive definite `A`, falling back to LU
/// when the Cholesky factorization breaks down numerically.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix, what: &'static str) -> Result<CMatrix> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::Singular(what))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn inverse_hpd(a: &CMatrix, what: &'static str) -> Result<CMatrix> {
    let n = a.nrows();
    solve_hpd(a, &CMatrix::identity(n, n), what)
}

/// Largest absolute deviation of `a` from Hermitian symmetry.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `e^{j phase}`.
#[inline]
pub fn unit(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}
