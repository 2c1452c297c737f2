//! Reduced WMMSE under a sum-power constraint.
//!
//! Every stationary precoder lies in `range(Hᴴ)`, so the solver iterates on
//! `X` (N×D) with `P = Hᴴ X` and works only with the Gram channel
//! `H̄ = H Hᴴ`. After `H̄` is formed, no iteration touches a matrix whose size
//! depends on `M`. The final precoder is rescaled to use the full budget.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::objective::{self, Signal};
use crate::types::{
    AuxState, ChannelSet, GramContext, IterationRecord, Precoder, ReducedPrecoder, SolveTrace, SystemConfig,
    Termination,
};

/// Below this the effective noise mass `η` counts as zero.
pub const ETA_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XUpdate {
    /// `D×D` solve.
    Compact,
    /// `K`-step low-rank recursion on a cached `H̄⁻¹`.
    Woodbury,
    /// Woodbury when `N = D` and `H̄⁻¹` is cached, compact otherwise.
    #[default]
    Auto,
}

impl XUpdate {
    pub fn resolve(self, gram: &GramContext, total_streams: usize) -> XUpdate {
        match self {
            XUpdate::Auto if gram.total_rx() == total_streams && gram.inverse().is_some() => XUpdate::Woodbury,
            XUpdate::Auto => XUpdate::Compact,
            other => other,
        }
    }
}

fn reduced_signal(gram: &GramContext, x: &ReducedPrecoder) -> Result<(CMat, f64)> {
    let (y, tau) = objective::reduced_product(gram, x)?;
    if !(tau > 0.0) {
        return Err(Error::Domain("induced power of X is zero".into()));
    }
    Ok((y, tau))
}

/// `U_k = (H̄_k X Xᴴ H̄_kᴴ + σ_k² τ / P_max · I)⁻¹ H̄_k X_k`.
pub fn update_u_reduced(gram: &GramContext, x: &ReducedPrecoder, config: &SystemConfig) -> Result<Vec<CMat>> {
    let (y, tau) = reduced_signal(gram, x)?;
    let noise = objective::reduced_noise(config, tau);
    let sig = Signal::new(&y, gram.rx_offsets(), x.stream_offsets());
    (0..gram.users()).map(|k| sig.receiver(k, noise[k])).collect()
}

/// `W_k = (I − U_kᴴ H̄_k X_k)⁻¹`.
pub fn update_w_reduced(gram: &GramContext, x: &ReducedPrecoder, u: &[CMat]) -> Result<Vec<CMat>> {
    let (y, _) = objective::reduced_product(gram, x)?;
    let sig = Signal::new(&y, gram.rx_offsets(), x.stream_offsets());
    (0..gram.users()).map(|k| sig.weight(k, &u[k])).collect()
}

/// `η = Σ_i σ_i² / P_max · α_i Tr(U_i W_i U_iᴴ)`.
pub fn eta(aux: &AuxState, config: &SystemConfig) -> f64 {
    let mut acc = 0.0;
    for k in 0..config.users() {
        if config.weights[k] != 0.0 {
            let m = &aux.u[k] * &aux.w[k] * aux.u[k].adjoint();
            acc += config.noise[k] / config.p_max * config.weights[k] * linalg::trace(&m).re;
        }
    }
    acc
}

fn checked_eta(aux: &AuxState, config: &SystemConfig) -> Result<f64> {
    let e = eta(aux, config);
    if e < ETA_FLOOR || !e.is_finite() {
        return Err(Error::Domain(format!("degenerate auxiliary state: η = {e:e}")));
    }
    Ok(e)
}

/// `X = Û (η Ŵ⁻¹ + Ûᴴ H̄ Û)⁻¹` with `Û = blkdiag(U_k)`, `Ŵ = blkdiag(α_k W_k)`.
/// Only a `D×D` system is solved. With some `α_k = 0`, `Ŵ` is singular and the
/// equivalent `Û Ŵ (η I + Ûᴴ H̄ Û Ŵ)⁻¹` is used instead.
pub fn update_x_compact(gram: &GramContext, aux: &AuxState, config: &SystemConfig) -> Result<ReducedPrecoder> {
    let eta = checked_eta(aux, config)?;
    let rx = gram.rx_offsets();
    let st = config.stream_offsets();
    let (n, d) = (gram.total_rx(), config.total_streams());
    // H̄ Û (N×D), then T = Ûᴴ H̄ Û (D×D).
    let mut hu = CMat::zeros(n, d);
    for k in 0..config.users() {
        let cols = gram.gram().columns(rx[k], rx[k + 1] - rx[k]);
        hu.columns_mut(st[k], st[k + 1] - st[k]).copy_from(&(cols * &aux.u[k]));
    }
    let mut t = CMat::zeros(d, d);
    for k in 0..config.users() {
        let rows = hu.rows(rx[k], rx[k + 1] - rx[k]);
        t.rows_mut(st[k], st[k + 1] - st[k]).copy_from(&aux.u[k].ad_mul(&rows));
    }
    let z = if config.weights.iter().all(|&a| a > 0.0) {
        let mut k_mat = t;
        for k in 0..config.users() {
            let w_inv = linalg::inverse_hpd(&aux.w[k], "MSE weight W_k")?;
            let dk = st[k + 1] - st[k];
            let mut blk = k_mat.view_mut((st[k], st[k]), (dk, dk));
            blk += w_inv * linalg::real(eta / config.weights[k]);
        }
        linalg::hermitianize(&mut k_mat);
        linalg::inverse_hpd(&k_mat, "η Ŵ⁻¹ + Ûᴴ H̄ Û")?
    } else {
        let w_hat = linalg::block_diag(
            &aux.w.iter().zip(&config.weights).map(|(w, &a)| w * linalg::real(a)).collect::<Vec<_>>(),
        );
        let m = linalg::identity(d) * linalg::real(eta) + t * &w_hat;
        w_hat * linalg::inverse(&m, "η I + Ûᴴ H̄ Û Ŵ")?
    };
    let mut x = CMat::zeros(n, d);
    for k in 0..config.users() {
        let zk = z.rows(st[k], st[k + 1] - st[k]);
        x.rows_mut(rx[k], rx[k + 1] - rx[k]).copy_from(&(&aux.u[k] * zk));
    }
    ReducedPrecoder::new(x, &config.streams)
}

/// Applies `A⁻¹ ← (A + C B Cᴴ)⁻¹` for each `(C, B)` in turn through the
/// Woodbury identity, starting from `a0_inv`.
pub fn woodbury_recursion(a0_inv: &CMat, updates: &[(CMat, CMat)]) -> Result<CMat> {
    let mut a_inv = a0_inv.clone();
    for (c, b) in updates {
        let ac = &a_inv * c;
        let mut inner = linalg::inverse(b, "B_l")? + c.ad_mul(&ac);
        linalg::hermitianize(&mut inner);
        let inner_inv = linalg::inverse(&inner, "B_l⁻¹ + C_lᴴ A⁻¹ C_l")?;
        a_inv -= &ac * inner_inv * ac.adjoint();
        linalg::hermitianize(&mut a_inv);
    }
    Ok(a_inv)
}

/// `A_K⁻¹` for `A_K = η H̄ + Σ_l α_l H̄_lᴴ U_l W_l U_lᴴ H̄_l`, built by the
/// `K`-step recursion from `A_0⁻¹ = H̄⁻¹ / η`.
pub fn woodbury_inverse(gram: &GramContext, aux: &AuxState, config: &SystemConfig) -> Result<CMat> {
    let gram_inv = gram
        .inverse()
        .ok_or_else(|| Error::InvalidConfig(vec!["Woodbury X-update needs the cached Gram inverse".into()]))?;
    let eta = checked_eta(aux, config)?;
    let a0_inv = gram_inv / linalg::real(eta);
    let updates: Vec<(CMat, CMat)> = (0..config.users())
        .filter(|&l| config.weights[l] != 0.0)
        .map(|l| (gram.block(l).adjoint() * &aux.u[l], &aux.w[l] * linalg::real(config.weights[l])))
        .collect();
    woodbury_recursion(&a0_inv, &updates)
}

/// `X_k = A_K⁻¹ H̄_kᴴ U_k α_k W_k` through [`woodbury_inverse`].
pub fn update_x_woodbury(gram: &GramContext, aux: &AuxState, config: &SystemConfig) -> Result<ReducedPrecoder> {
    let a_inv = woodbury_inverse(gram, aux, config)?;
    let st = config.stream_offsets();
    let mut x = CMat::zeros(gram.total_rx(), config.total_streams());
    for k in 0..config.users() {
        let rhs = gram.block(k).adjoint() * &aux.u[k] * &aux.w[k] * linalg::real(config.weights[k]);
        x.columns_mut(st[k], st[k + 1] - st[k]).copy_from(&(&a_inv * rhs));
    }
    ReducedPrecoder::new(x, &config.streams)
}

pub fn update_x(gram: &GramContext, aux: &AuxState, config: &SystemConfig, kind: XUpdate) -> Result<ReducedPrecoder> {
    match kind.resolve(gram, config.total_streams()) {
        XUpdate::Woodbury => update_x_woodbury(gram, aux, config),
        _ => update_x_compact(gram, aux, config),
    }
}

/// `β = P_max / Σ_k Tr(H̄ X_k X_kᴴ)` and `√β X`, whose induced precoder meets
/// the sum-power budget with equality.
pub fn scale_to_full_power(gram: &GramContext, x: &ReducedPrecoder, p_max: f64) -> Result<(f64, ReducedPrecoder)> {
    let tau = x.induced_power(gram);
    if !(tau > 0.0) {
        return Err(Error::Domain("cannot scale X = 0 to full power".into()));
    }
    let beta = p_max / tau;
    Ok((beta, x.scaled(beta.sqrt())))
}

/// `X₀ = (H Hᴴ)⁻¹ H P₀`, shrunk if its induced power exceeds `P_max`.
pub fn reduced_init(channel: &ChannelSet, gram: &GramContext, p0: &Precoder, p_max: f64) -> Result<ReducedPrecoder> {
    let hp = objective::received(channel, p0)?;
    let x = linalg::solve_hpd(gram.gram(), &hp, "Gram channel H Hᴴ")?;
    let x = ReducedPrecoder::new(x, &p0.streams())?;
    let tau = x.induced_power(gram);
    if !(tau > 0.0) {
        return Err(Error::Domain("initial precoder has no component in range(Hᴴ)".into()));
    }
    Ok(if tau > p_max { x.scaled((p_max / tau).sqrt()) } else { x })
}

#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub x: ReducedPrecoder,
    pub aux: AuxState,
    /// WSR column holds the scale-invariant reduced objective, which equals
    /// the WSR of the full-power precoder.
    pub trace: SolveTrace,
    pub x_update: XUpdate,
}

/// Iterates U, W, X updates on the Gram channel alone.
pub fn solve_with_gram(
    gram: &GramContext,
    config: &SystemConfig,
    init: &ReducedPrecoder,
    x_update: XUpdate,
) -> Result<ReducedSolution> {
    config.check()?;
    if gram.total_rx() != config.total_rx() || init.streams() != config.streams {
        return Err(Error::Dimension("Gram channel or initial X does not match the configuration".into()));
    }
    let tau = init.induced_power(gram);
    if tau > config.p_max * (1.0 + 1e-10) {
        return Err(Error::Infeasible(format!("initial induced power {tau} exceeds P_max = {}", config.p_max)));
    }
    let kind = x_update.resolve(gram, config.total_streams());
    if kind == XUpdate::Woodbury && gram.inverse().is_none() {
        return Err(Error::InvalidConfig(vec!["Woodbury X-update needs the cached Gram inverse".into()]));
    }
    let start = Instant::now();
    let mut x = init.clone();
    let mut aux = AuxState::initial(&config.rx_antennas, &config.streams);
    let mut prev = 0.0;
    let mut records = Vec::new();
    let mut termination = Termination::MaxIters;
    for iteration in 1..=config.max_iters {
        let t0 = Instant::now();
        aux.u = update_u_reduced(gram, &x, config)?;
        aux.w = update_w_reduced(gram, &x, &aux.u)?;
        let surrogate = aux.weighted_logdet(&config.weights)?;
        x = update_x(gram, &aux, config, kind)?;
        let wall_s = t0.elapsed().as_secs_f64();
        let wsr = config.rate_unit.from_nats(objective::reduced_objective(gram, &x, config)?);
        records.push(IterationRecord { iteration, wsr, surrogate, wall_s });
        if (surrogate - prev).abs() <= config.epsilon {
            termination = Termination::ToleranceMet;
            break;
        }
        prev = surrogate;
    }
    let trace = SolveTrace { records, termination, total_wall_s: start.elapsed().as_secs_f64() };
    Ok(ReducedSolution { x, aux, trace, x_update: kind })
}

#[derive(Debug, Clone)]
pub struct RwmmseSolution {
    /// `√β Hᴴ X`, at full power.
    pub precoder: Precoder,
    /// Unscaled final iterate.
    pub reduced: ReducedPrecoder,
    pub beta: f64,
    pub aux: AuxState,
    pub trace: SolveTrace,
    pub x_update: XUpdate,
    /// Seconds spent forming `H̄` (and `H̄⁻¹` when used).
    pub gram_seconds: f64,
}

/// Forms the Gram channel, maps `init` to `X₀`, iterates and rescales.
pub fn solve(channel: &ChannelSet, config: &SystemConfig, init: &Precoder, x_update: XUpdate) -> Result<RwmmseSolution> {
    config.check()?;
    let mut gram = GramContext::from_channel(channel)?;
    let wants_inverse = match x_update {
        XUpdate::Woodbury => true,
        XUpdate::Auto => config.total_rx() == config.total_streams(),
        XUpdate::Compact => false,
    };
    if wants_inverse {
        gram = gram.with_inverse()?;
    }
    let x0 = reduced_init(channel, &gram, init, config.p_max)?;
    let sol = solve_with_gram(&gram, config, &x0, x_update)?;
    let (beta, scaled) = scale_to_full_power(&gram, &sol.x, config.p_max)?;
    Ok(RwmmseSolution {
        precoder: scaled.induced_precoder(channel),
        reduced: sol.x,
        beta,
        aux: sol.aux,
        trace: sol.trace,
        x_update: sol.x_update,
        gram_seconds: gram.build_seconds(),
    })
}
