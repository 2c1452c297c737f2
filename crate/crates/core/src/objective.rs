//! Rates, WSR, MSE matrices, the log-det/MSE identity, gradients and
//! stationarity residuals.
//!
//! Most quantities depend on the channel and precoder only through the
//! received-signal product `Y = H P` (N×D). The [`Signal`] kernels work on
//! that product, so the same code serves the full problem (`Y = H P`, noise
//! `σ_k²`) and the reduced one (`Y = H̄ X`, noise `σ_k² τ / P_max`).

use nalgebra::DMatrixView;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::types::{sum_power, AuxState, ChannelSet, GramContext, Precoder, ReducedPrecoder, SystemConfig};

/// A received-signal product `Y` with its row (receive) and column (stream)
/// partitions.
#[derive(Debug, Clone, Copy)]
pub struct Signal<'a> {
    pub y: &'a CMat,
    pub rx: &'a [usize],
    pub st: &'a [usize],
}

impl<'a> Signal<'a> {
    pub fn new(y: &'a CMat, rx: &'a [usize], st: &'a [usize]) -> Self {
        debug_assert_eq!(*rx.last().unwrap(), y.nrows());
        debug_assert_eq!(*st.last().unwrap(), y.ncols());
        Signal { y, rx, st }
    }

    pub fn users(&self) -> usize {
        self.rx.len() - 1
    }

    /// `H_k P` (N_k×D).
    pub fn rows(&self, k: usize) -> DMatrixView<'a, C64> {
        self.y.rows(self.rx[k], self.rx[k + 1] - self.rx[k])
    }

    /// `H_i P_k` (N_i×D_k).
    pub fn block(&self, i: usize, k: usize) -> DMatrixView<'a, C64> {
        self.y
            .view((self.rx[i], self.st[k]), (self.rx[i + 1] - self.rx[i], self.st[k + 1] - self.st[k]))
    }

    /// `S_k = Σ_j H_k P_j P_jᴴ H_kᴴ + noise·I`.
    pub fn covariance(&self, k: usize, noise: f64) -> CMat {
        let yk = self.rows(k);
        let mut s = &yk * yk.adjoint();
        for i in 0..s.nrows() {
            s[(i, i)] += noise;
        }
        linalg::hermitianize(&mut s);
        s
    }

    /// Interference-plus-noise `S_k − H_k P_k P_kᴴ H_kᴴ`, formed directly.
    pub fn interference(&self, k: usize, noise: f64) -> CMat {
        let n_k = self.rx[k + 1] - self.rx[k];
        let mut out = CMat::zeros(n_k, n_k);
        for j in 0..self.users() {
            if j != k {
                let b = self.block(k, j);
                out += &b * b.adjoint();
            }
        }
        for i in 0..n_k {
            out[(i, i)] += noise;
        }
        linalg::hermitianize(&mut out);
        out
    }

    /// `log det S_k − log det N_k` in nats.
    pub fn rate(&self, k: usize, noise: f64) -> Result<f64> {
        let s = linalg::logdet_hpd(&self.covariance(k, noise), "signal-plus-interference covariance")?;
        let n = linalg::logdet_hpd(&self.interference(k, noise), "interference-plus-noise covariance")?;
        // Exact arithmetic gives a nonnegative difference; clamp rounding.
        Ok((s - n).max(0.0))
    }

    /// MMSE receiver `U_k = S_k⁻¹ H_k P_k`.
    pub fn receiver(&self, k: usize, noise: f64) -> Result<CMat> {
        linalg::solve_hpd(&self.covariance(k, noise), &self.block(k, k).clone_owned(), "receive covariance S_k")
    }

    /// `E_k = I − Uᴴ H_kP_k − (H_kP_k)ᴴ U + Uᴴ S_k U` for an arbitrary `U`.
    pub fn mse(&self, k: usize, u: &CMat, noise: f64) -> CMat {
        let own = self.block(k, k);
        let uh_own = u.ad_mul(&own);
        let s = self.covariance(k, noise);
        let mut e = linalg::identity(own.ncols()) - &uh_own - uh_own.adjoint() + u.ad_mul(&(s * u));
        linalg::hermitianize(&mut e);
        e
    }

    /// `W_k = (I − Uᴴ H_k P_k)⁻¹`, symmetrized.
    pub fn weight(&self, k: usize, u: &CMat) -> Result<CMat> {
        let own = self.block(k, k);
        let m = linalg::identity(own.ncols()) - u.ad_mul(&own);
        let mut w = linalg::inverse(&m, "I − Uᴴ H_k P_k")?;
        linalg::hermitianize(&mut w);
        Ok(w)
    }

    /// `Σ_k α_k R_k` in nats; users with zero weight are skipped.
    pub fn weighted_rate(&self, weights: &[f64], noise: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..self.users() {
            if weights[k] != 0.0 {
                acc += weights[k] * self.rate(k, noise[k])?;
            }
        }
        Ok(acc)
    }
}

fn check_noise(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(format!("interference-plus-noise covariance (σ² = {sigma2})")))
    }
}

/// `Y = H P`.
pub fn received(channel: &ChannelSet, p: &Precoder) -> Result<CMat> {
    if channel.antennas() != p.antennas() {
        return Err(Error::Dimension(format!(
            "channel has {} antennas, precoder {}",
            channel.antennas(),
            p.antennas()
        )));
    }
    if channel.users() != p.users() {
        return Err(Error::Dimension(format!("channel has {} users, precoder {}", channel.users(), p.users())));
    }
    Ok(channel.h() * p.matrix())
}

/// Achievable rate of user `k` in nats.
pub fn user_rate(k: usize, channel: &ChannelSet, p: &Precoder, sigma2: f64) -> Result<f64> {
    check_noise(sigma2)?;
    let y = received(channel, p)?;
    Signal::new(&y, channel.rx_offsets(), p.stream_offsets()).rate(k, sigma2)
}

pub fn user_rates(channel: &ChannelSet, p: &Precoder, noise: &[f64]) -> Result<Vec<f64>> {
    let y = received(channel, p)?;
    let sig = Signal::new(&y, channel.rx_offsets(), p.stream_offsets());
    (0..channel.users())
        .map(|k| {
            check_noise(noise[k])?;
            sig.rate(k, noise[k])
        })
        .collect()
}

/// Weighted sum rate in nats.
pub fn wsr_nats(channel: &ChannelSet, p: &Precoder, config: &SystemConfig) -> Result<f64> {
    config.noise.iter().try_for_each(|&s| check_noise(s))?;
    let y = received(channel, p)?;
    Signal::new(&y, channel.rx_offsets(), p.stream_offsets()).weighted_rate(&config.weights, &config.noise)
}

/// Weighted sum rate in the configured unit.
pub fn wsr(channel: &ChannelSet, p: &Precoder, config: &SystemConfig) -> Result<f64> {
    Ok(config.rate_unit.from_nats(wsr_nats(channel, p, config)?))
}

/// MSE matrix `E_k` at `(U_k, P)`.
pub fn mse_matrix(k: usize, channel: &ChannelSet, p: &Precoder, aux: &AuxState, sigma2: f64) -> Result<CMat> {
    let y = received(channel, p)?;
    let sig = Signal::new(&y, channel.rx_offsets(), p.stream_offsets());
    let u = &aux.u[k];
    if u.shape() != sig.block(k, k).shape() {
        return Err(Error::Dimension(format!("U_{k} has shape {:?}", u.shape())));
    }
    Ok(sig.mse(k, u, sigma2))
}

/// `(H̄ X, τ)` with `τ = Σ_i Tr(H̄ X_i X_iᴴ)`.
pub fn reduced_product(gram: &GramContext, x: &ReducedPrecoder) -> Result<(CMat, f64)> {
    if x.matrix().nrows() != gram.total_rx() {
        return Err(Error::Dimension(format!(
            "reduced precoder has {} rows, Gram channel {}",
            x.matrix().nrows(),
            gram.total_rx()
        )));
    }
    let y = gram.gram() * x.matrix();
    let tau = linalg::real_inner(x.matrix(), &y);
    Ok((y, tau))
}

/// Per-user effective noise `σ_k² τ / P_max` of the reduced problem.
pub fn reduced_noise(config: &SystemConfig, tau: f64) -> Vec<f64> {
    config.noise.iter().map(|s| s * tau / config.p_max).collect()
}

/// Reduced MSE matrix `E′_k`, whose noise term is coupled to the induced
/// power `τ`.
pub fn reduced_mse_matrix(
    k: usize,
    gram: &GramContext,
    x: &ReducedPrecoder,
    aux: &AuxState,
    config: &SystemConfig,
) -> Result<CMat> {
    let (y, tau) = reduced_product(gram, x)?;
    let noise = reduced_noise(config, tau);
    let sig = Signal::new(&y, gram.rx_offsets(), x.stream_offsets());
    let u = &aux.u[k];
    if u.shape() != sig.block(k, k).shape() {
        return Err(Error::Dimension(format!("U_{k} has shape {:?}", u.shape())));
    }
    Ok(sig.mse(k, u, noise[k]))
}

/// The scale-invariant objective `Σ_k α_k R̃_k(X)` in nats. Equals the WSR of
/// the full-power precoder `√(P_max/τ) Hᴴ X`.
pub fn reduced_objective(gram: &GramContext, x: &ReducedPrecoder, config: &SystemConfig) -> Result<f64> {
    let (y, tau) = reduced_product(gram, x)?;
    if !(tau > 0.0) {
        return Err(Error::Domain("objective is undefined at X = 0".into()));
    }
    let noise = reduced_noise(config, tau);
    Signal::new(&y, gram.rx_offsets(), x.stream_offsets()).weighted_rate(&config.weights, &noise)
}

// ---------------------------------------------------------------------------
// Log-det / MSE identity with A (n×p), B (p×l), N (n×n).

fn logdet_identity_dims(a: &CMat, b: &CMat, n: &CMat) -> Result<()> {
    if a.ncols() != b.nrows() || n.nrows() != a.nrows() || n.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, N {:?} are incompatible",
            a.shape(),
            b.shape(),
            n.shape()
        )));
    }
    Ok(())
}

/// `log det(I + A B Bᴴ Aᴴ N⁻¹)`.
pub fn logdet_identity_lhs(a: &CMat, b: &CMat, n: &CMat) -> Result<f64> {
    logdet_identity_dims(a, b, n)?;
    let ab = a * b;
    let mut s = n + &ab * ab.adjoint();
    linalg::hermitianize(&mut s);
    Ok(linalg::logdet_hpd(&s, "N + A B Bᴴ Aᴴ")? - linalg::logdet_hpd(n, "N")?)
}

/// `E(Γ, B) = (I − Γᴴ A B)(I − Γᴴ A B)ᴴ + Γᴴ N Γ` (l×l).
pub fn logdet_identity_mse(a: &CMat, b: &CMat, n: &CMat, gamma: &CMat) -> Result<CMat> {
    logdet_identity_dims(a, b, n)?;
    let r = linalg::identity(b.ncols()) - gamma.ad_mul(&(a * b));
    let mut e = &r * r.adjoint() + gamma.ad_mul(&(n * gamma));
    linalg::hermitianize(&mut e);
    Ok(e)
}

/// `Γ̂ = (N + A B Bᴴ Aᴴ)⁻¹ A B`.
pub fn logdet_identity_gamma(a: &CMat, b: &CMat, n: &CMat) -> Result<CMat> {
    logdet_identity_dims(a, b, n)?;
    linalg::cholesky(n, "N")?;
    let ab = a * b;
    let mut s = n + &ab * ab.adjoint();
    linalg::hermitianize(&mut s);
    linalg::solve_hpd(&s, &ab, "N + A B Bᴴ Aᴴ")
}

/// `Ω̂ = (I − Γᴴ A B)⁻¹`.
pub fn logdet_identity_omega(a: &CMat, b: &CMat, gamma: &CMat) -> Result<CMat> {
    let m = linalg::identity(b.ncols()) - gamma.ad_mul(&(a * b));
    let mut w = linalg::inverse(&m, "I − Γᴴ A B")?;
    linalg::hermitianize(&mut w);
    Ok(w)
}

/// `log det Ω − Tr(Ω E(Γ, B)) + l`.
pub fn logdet_identity_rhs(a: &CMat, b: &CMat, n: &CMat, gamma: &CMat, omega: &CMat) -> Result<f64> {
    linalg::cholesky(n, "N")?;
    let e = logdet_identity_mse(a, b, n, gamma)?;
    let ld = linalg::logdet_hpd(omega, "Ω")?;
    Ok(ld - linalg::trace(&(omega * e)).re + b.ncols() as f64)
}

// ---------------------------------------------------------------------------
// Gradients and stationarity.

/// WSR gradient pieces in the `∂/∂P*` convention.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// `z[i][k] = Z_ik` (N_i×D_k); `Z_kk = S_k⁻¹ H_k P_k`,
    /// `Z_ik = (S_i⁻¹ − N_i⁻¹) H_i P_k` for `i ≠ k`.
    pub z: Vec<Vec<CMat>>,
    /// `G_k = Σ_i α_i H_iᴴ Z_ik` (M×D_k).
    pub g: Vec<CMat>,
}

impl GradientBundle {
    /// `[G_1, …, G_K]` (M×D).
    pub fn stacked(&self) -> CMat {
        let m = self.g.first().map_or(0, |g| g.nrows());
        let d: usize = self.g.iter().map(|g| g.ncols()).sum();
        let mut out = CMat::zeros(m, d);
        let mut c = 0;
        for g in &self.g {
            out.columns_mut(c, g.ncols()).copy_from(g);
            c += g.ncols();
        }
        out
    }
}

pub fn wsr_gradient(channel: &ChannelSet, p: &Precoder, config: &SystemConfig) -> Result<GradientBundle> {
    config.noise.iter().try_for_each(|&s| check_noise(s))?;
    let y = received(channel, p)?;
    let rx = channel.rx_offsets();
    let st = p.stream_offsets();
    let sig = Signal::new(&y, rx, st);
    let users = channel.users();
    let mut z = Vec::with_capacity(users);
    let mut weighted = CMat::zeros(y.nrows(), y.ncols());
    for i in 0..users {
        let s_inv = linalg::inverse_hpd(&sig.covariance(i, config.noise[i]), "receive covariance S_i")?;
        let n_inv = linalg::inverse_hpd(&sig.interference(i, config.noise[i]), "interference-plus-noise covariance")?;
        let diff = &s_inv - &n_inv;
        let mut row = Vec::with_capacity(users);
        for k in 0..users {
            let zik = if i == k { &s_inv * sig.block(i, k) } else { &diff * sig.block(i, k) };
            weighted
                .view_mut((rx[i], st[k]), zik.shape())
                .copy_from(&(&zik * linalg::real(config.weights[i])));
            row.push(zik);
        }
        z.push(row);
    }
    let stacked = channel.h().ad_mul(&weighted);
    let g = (0..users).map(|k| stacked.columns(st[k], st[k + 1] - st[k]).clone_owned()).collect();
    Ok(GradientBundle { z, g })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// Least-squares multiplier `max(0, Re Tr(Pᴴ G) / ‖P‖²)`.
    pub lambda_fit: f64,
    /// `‖G − λ P‖_F / max(1, ‖G‖_F)`.
    pub residual: f64,
}

/// First-order residual of the sum-power problem at `P`.
pub fn kkt_residual_spc(channel: &ChannelSet, p: &Precoder, config: &SystemConfig) -> Result<KktResidual> {
    let power = sum_power(p);
    if power > config.p_max * (1.0 + 1e-8) {
        return Err(Error::Infeasible(format!("sum power {power} exceeds P_max = {}", config.p_max)));
    }
    let g = wsr_gradient(channel, p, config)?.stacked();
    let lambda_fit = if power > 0.0 { (linalg::real_inner(p.matrix(), &g) / power).max(0.0) } else { 0.0 };
    let r = &g - p.matrix() * linalg::real(lambda_fit);
    Ok(KktResidual { lambda_fit, residual: r.norm() / g.norm().max(1.0) })
}

/// Gradient of [`reduced_objective`] with respect to each `X_k*` (N×D_k).
pub fn unconstrained_gradient(gram: &GramContext, x: &ReducedPrecoder, config: &SystemConfig) -> Result<Vec<CMat>> {
    let (y, tau) = reduced_product(gram, x)?;
    if !(tau > 0.0) {
        return Err(Error::Domain("gradient is undefined at X = 0".into()));
    }
    let noise = reduced_noise(config, tau);
    let rx = gram.rx_offsets();
    let st = x.stream_offsets();
    let sig = Signal::new(&y, rx, st);
    let users = gram.users();
    let mut z = CMat::zeros(y.nrows(), y.ncols());
    let mut trace_term = 0.0;
    for i in 0..users {
        let a = config.weights[i];
        if a == 0.0 {
            continue;
        }
        let d_inv = linalg::inverse_hpd(&sig.covariance(i, noise[i]), "D_i")?;
        let f_inv = linalg::inverse_hpd(&sig.interference(i, noise[i]), "F_i")?;
        let diff = &d_inv - &f_inv;
        trace_term += a * config.noise[i] / config.p_max * linalg::trace(&diff).re;
        for k in 0..users {
            let zik = if i == k { &d_inv * sig.block(i, k) } else { &diff * sig.block(i, k) };
            z.view_mut((rx[i], st[k]), zik.shape()).copy_from(&(zik * linalg::real(a)));
        }
    }
    let full = gram.gram() * z + &y * linalg::real(trace_term);
    Ok((0..users).map(|k| full.columns(st[k], st[k + 1] - st[k]).clone_owned()).collect())
}

/// `‖(I − Hᴴ(H Hᴴ)⁻¹H) P‖_F / ‖P‖_F`, the share of `P` outside `range(Hᴴ)`.
pub fn subspace_residual(channel: &ChannelSet, p: &Precoder) -> Result<f64> {
    let norm = p.matrix().norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let h = channel.h();
    let gram = match channel.gram() {
        Some(g) => g.clone(),
        None => h * h.adjoint(),
    };
    let coeff = linalg::solve_hpd(&gram, &(h * p.matrix()), "Gram channel H Hᴴ")?;
    let proj = h.ad_mul(&coeff);
    Ok((p.matrix() - proj).norm() / norm)
}
