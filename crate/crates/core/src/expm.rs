//! Numeric matrix exponential (Padé scaling and squaring) and the
//! block-triangular Fréchet derivative built on it.
//!
//! This is the reference exponential for the whole crate: the N-level path
//! propagates with it and the analytic qubit kernel is checked against it.

use nalgebra::{DMatrix, Matrix3};

use crate::types::CMatrix;

/// `e^m` for a square complex matrix.
pub fn expm(m: &CMatrix) -> CMatrix {
    m.clone().exp()
}

/// `e^m` for a real 3x3 matrix.
pub fn expm3(m: &Matrix3<f64>) -> Matrix3<f64> {
    m.exp()
}

/// Fréchet derivative `L(x, e) = int_0^1 e^{a x} e e^{(1-a) x} da`, read off
/// the upper-right block of `exp([[x, e], [0, x]])`.
pub fn expm_frechet(x: &CMatrix, e: &CMatrix) -> CMatrix {
    let n = x.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(x);
    big.view_mut((n, n), (n, n)).copy_from(x);
    big.view_mut((0, n), (n, n)).copy_from(e);
    let eb = expm(&big);
    eb.view((0, n), (n, n)).into_owned()
}

/// Same as [`expm_frechet`] but also returns `e^x` (the diagonal block).
pub fn expm_with_frechet(x: &CMatrix, e: &CMatrix) -> (CMatrix, CMatrix) {
    let n = x.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(x);
    big.view_mut((n, n), (n, n)).copy_from(x);
    big.view_mut((0, n), (n, n)).copy_from(e);
    let eb = expm(&big);
    (eb.view((0, 0), (n, n)).into_owned(), eb.view((0, n), (n, n)).into_owned())
}
