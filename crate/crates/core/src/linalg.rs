//! Dense complex helpers shared by the solvers.
//!
//! Row vectors of the system model (channels `h`, coefficients `α`, the
//! linear terms `f_i`) are stored as `DVector`s holding their entries; the
//! helpers below spell out the row-vector products so call sites stay close
//! to the algebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `a · b` for row `a` and column `b`, without conjugation.
#[inline]
pub fn dot(a: &CVector, b: &CVector) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Row vector times matrix: entries of `a M`.
#[inline]
pub fn row_times(a: &CVector, m: &CMatrix) -> CVector {
    m.tr_mul(a)
}

/// `Re[a M aᴴ]` for a row vector `a` and Hermitian `M`.
pub fn row_quad(a: &CVector, m: &CMatrix) -> f64 {
    let ac = a.map(|z| z.conj());
    dot(a, &(m * ac)).re
}

/// `Re[a bᴴ]` for two row vectors.
#[inline]
pub fn re_inner(a: &CVector, b: &CVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

pub fn norm_sqr(a: &CVector) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hermitian_inverse(m: &CMatrix) -> Option<CMatrix> {
    m.clone().cholesky().map(|c| c.inverse())
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
