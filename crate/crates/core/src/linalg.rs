//! Dense complex helpers shared by the solvers.
//!
//! Everything here works on `DMatrix<Complex64>`. Hermitian positive definite
//! systems go through Cholesky; anything else goes through LU.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

#[inline]
pub fn sq(x: f64) -> f64 {
    x * x
}

/// Prefix sums of block sizes: `[0, s0, s0+s1, ...]`.
pub fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

/// `(A + Aᴴ) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    let mut out = a.clone();
    hermitianize(&mut out);
    out
}

pub fn hermitianize(a: &mut CMat) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        a[(j, j)] = real(a[(j, j)].re);
        for i in (j + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

pub fn fro_norm_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `Re Tr(Aᴴ B)`, the real inner product of two equally shaped matrices.
pub fn real_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `‖A − B‖_F / max(‖B‖_F, floor)`.
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    let diff = (a - b).norm();
    diff / b.norm().max(1e-300)
}

/// Cholesky factorization that rejects indefinite input.
///
/// The complex factorization takes complex square roots of the pivots, so a
/// negative pivot yields an imaginary diagonal instead of a failure; the
/// pivots are checked explicitly.
pub fn cholesky(a: &CMat, what: &str) -> Result<Cholesky<C64, Dyn>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    let l = chol.l_dirty();
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-8 * d.re) {
            return Err(Error::NotPositiveDefinite(what.to_string()));
        }
    }
    Ok(chol)
}

pub fn is_positive_definite(a: &CMat) -> bool {
    cholesky(a, "").is_ok()
}

/// Natural-log determinant of a Hermitian positive definite matrix.
pub fn logdet_hpd(a: &CMat, what: &str) -> Result<f64> {
    let chol = cholesky(a, what)?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..a.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>())
}

/// Solves `A X = B` for Hermitian positive definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat, what: &str) -> Result<CMat> {
    let x = cholesky(a, what)?.solve(b);
    if all_finite(&x) {
        Ok(x)
    } else {
        Err(Error::NotPositiveDefinite(what.to_string()))
    }
}

pub fn inverse_hpd(a: &CMat, what: &str) -> Result<CMat> {
    let mut inv = cholesky(a, what)?.inverse();
    hermitianize(&mut inv);
    Ok(inv)
}

/// General inverse through LU with partial pivoting.
pub fn inverse(a: &CMat, what: &str) -> Result<CMat> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what.to_string()))
    }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_part(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Dense block-diagonal assembly.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn all_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hpd3() -> CMat {
        let g = CMat::from_fn(3, 3, |i, j| C64::new((i + 2 * j) as f64 * 0.3 - 0.4, (i as f64 - j as f64) * 0.2));
        &g * g.adjoint() + identity(3)
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let a = hpd3();
        let expect: f64 = a.clone().symmetric_eigenvalues().iter().map(|l| l.ln()).sum();
        assert!((logdet_hpd(&a, "a").unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let mut a = identity(2);
        a[(1, 1)] = real(-1.0);
        assert!(matches!(logdet_hpd(&a, "a"), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn hpd_inverse_roundtrip() {
        let a = hpd3();
        let inv = inverse_hpd(&a, "a").unwrap();
        assert!((&a * inv - identity(3)).norm() < 1e-12);
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = CMat::from_element(1, 2, ONE);
        let b = CMat::from_element(2, 1, real(2.0));
        let d = block_diag(&[a, b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 1)], ONE);
        assert_eq!(d[(2, 2)], real(2.0));
        assert_eq!(d[(0, 2)], ZERO);
    }

    #[test]
    fn offsets_are_prefix_sums() {
        assert_eq!(offsets(&[2, 3, 1]), vec![0, 2, 5, 6]);
    }
}
