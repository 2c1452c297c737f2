//! Helpers shared by tests, acceptance checks and the harness self-check:
//! seeded random matrices and central finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, CMat, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. `CN(0, 1)` entries.
pub fn random_cmat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// `G Gᴴ / n + shift·I`, Hermitian positive definite for `shift > 0`.
pub fn random_hpd<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: f64) -> CMat {
    let g = random_cmat(rng, n, n);
    let mut a = &g * g.adjoint() / linalg::real(n.max(1) as f64);
    for i in 0..n {
        a[(i, i)] += shift;
    }
    linalg::hermitianize(&mut a);
    a
}

/// Root-mean-square entry magnitude.
pub fn rms(x: &CMat) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (linalg::fro_norm_sq(x) / x.len() as f64).sqrt()
    }
}

/// Central-difference gradient of a real function of a complex matrix, in the
/// `∂f/∂X*` convention: `(∂f/∂Re X + i ∂f/∂Im X) / 2`.
pub fn fd_gradient(f: impl Fn(&CMat) -> f64, x: &CMat, step: f64) -> CMat {
    let mut probe = x.clone();
    let mut out = CMat::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let base = x[(i, j)];
            let mut partial = |delta: C64| {
                probe[(i, j)] = base + delta;
                let plus = f(&probe);
                probe[(i, j)] = base - delta;
                let minus = f(&probe);
                probe[(i, j)] = base;
                (plus - minus) / (2.0 * step)
            };
            let d_re = partial(C64::new(step, 0.0));
            let d_im = partial(C64::new(0.0, step));
            out[(i, j)] = C64::new(d_re, d_im) * 0.5;
        }
    }
    out
}

/// Finite-difference step `rel · rms(x)`, so the probe scales with the
/// magnitude of the point (channel gains can sit near 1e-5).
pub fn relative_step(x: &CMat, rel: f64) -> f64 {
    let r = rms(x);
    rel * if r > 0.0 { r } else { 1.0 }
}

/// Least-squares slope of `y` on `x` (pass log-log pairs for an exponent).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_squared_norm_is_x() {
        // f = ‖X‖² has ∂f/∂X* = X.
        let mut r = rng(1);
        let x = random_cmat(&mut r, 3, 2);
        let g = fd_gradient(linalg::fro_norm_sq, &x, 1e-6);
        assert!((g - &x).norm() < 1e-8);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|&x| (x.ln(), (3.0 * x * x).ln())).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hpd_is_positive_definite() {
        let mut r = rng(2);
        assert!(linalg::is_positive_definite(&random_hpd(&mut r, 4, 0.1)));
    }
}
