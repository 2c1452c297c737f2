//! Closed-form precoders (MRT, ZF, RZF, EZF) and power normalization.
//!
//! The raw `mrt`/`zf`/`rzf` forms act on any stacked channel matrix. When some
//! user carries fewer streams than receive antennas they are applied to the
//! stream-selected equivalent channel `Ṽᴴ` built from each user's dominant
//! right singular vectors, so the column count always matches `D`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::types::{per_antenna_power, sum_power, ChannelSet, Precoder, SystemConfig};

/// `Hᴴ`.
pub fn mrt(h: &CMat) -> CMat {
    h.adjoint()
}

/// `Hᴴ (H Hᴴ)⁻¹`.
pub fn zf(h: &CMat) -> Result<CMat> {
    let mut g = h * h.adjoint();
    linalg::hermitianize(&mut g);
    let coeff = linalg::solve_hpd(&g, &linalg::identity(h.nrows()), "H Hᴴ (channel is rank deficient)")
        .map_err(|_| Error::Singular("H Hᴴ (channel is rank deficient)".into()))?;
    Ok(h.adjoint() * coeff)
}

/// `Hᴴ (H Hᴴ + μ I)⁻¹`.
pub fn rzf(h: &CMat, mu: f64) -> Result<CMat> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("RZF regularization must be positive, got {mu}")));
    }
    let mut g = h * h.adjoint();
    for i in 0..g.nrows() {
        g[(i, i)] += mu;
    }
    linalg::hermitianize(&mut g);
    Ok(h.adjoint() * linalg::solve_hpd(&g, &linalg::identity(h.nrows()), "H Hᴴ + μI")?)
}

/// `Ṽ = [Ṽ_1, …, Ṽ_K]` (M×D): each `Ṽ_k` holds the top `D_k` right singular
/// vectors of `H_k`, computed from the small `N_k×N_k` eigenproblem of
/// `H_k H_kᴴ` as `v_i = H_kᴴ u_i / s_i`.
pub fn stream_basis(channel: &ChannelSet, streams: &[usize]) -> Result<CMat> {
    if streams.len() != channel.users() {
        return Err(Error::Dimension(format!("{} stream counts for {} users", streams.len(), channel.users())));
    }
    let d: usize = streams.iter().sum();
    let mut v = CMat::zeros(channel.antennas(), d);
    let mut col = 0;
    for (k, &dk) in streams.iter().enumerate() {
        let hk = channel.user(k);
        if dk > hk.nrows() {
            return Err(Error::Dimension(format!("user {k}: D_k exceeds N_k ({dk} > {})", hk.nrows())));
        }
        let mut g = &hk * hk.adjoint();
        linalg::hermitianize(&mut g);
        let eig = g.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        for &i in order.iter().take(dk) {
            let lambda = eig.eigenvalues[i];
            if !(lambda > linalg::sq(crate::types::RANK_TOL) * top && lambda > 0.0) {
                return Err(Error::Singular(format!("user {k} channel is rank deficient")));
            }
            let vi = hk.adjoint() * eig.eigenvectors.column(i) / linalg::real(lambda.sqrt());
            v.column_mut(col).copy_from(&vi);
            col += 1;
        }
    }
    Ok(v)
}

/// Equivalent channel `Ṽᴴ` (D×M).
pub fn equivalent_channel(channel: &ChannelSet, streams: &[usize]) -> Result<CMat> {
    Ok(stream_basis(channel, streams)?.adjoint())
}

/// `Ṽ (Ṽᴴ Ṽ)⁻¹`, zero forcing on the equivalent channel.
pub fn ezf(channel: &ChannelSet, streams: &[usize]) -> Result<Precoder> {
    let v = stream_basis(channel, streams)?;
    let mut g = v.ad_mul(&v);
    linalg::hermitianize(&mut g);
    let coeff = linalg::solve_hpd(&g, &linalg::identity(g.nrows()), "Ṽᴴ Ṽ")
        .map_err(|_| Error::Singular("Ṽᴴ Ṽ (collinear user subspaces)".into()))?;
    Precoder::new(v * coeff, streams)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Mrt,
    Zf,
    Rzf,
    Ezf,
}

/// `μ = D · mean(σ_k²) / P_max`.
pub fn default_rzf_mu(config: &SystemConfig) -> f64 {
    let mean = config.noise.iter().sum::<f64>() / config.noise.len() as f64;
    config.total_streams() as f64 * mean / config.p_max
}

/// The unnormalized baseline precoder for `config`'s stream layout.
pub fn baseline(kind: Baseline, channel: &ChannelSet, config: &SystemConfig, rzf_mu: Option<f64>) -> Result<Precoder> {
    let full = config.streams == channel.rx_antennas();
    if kind == Baseline::Ezf {
        return ezf(channel, &config.streams);
    }
    let h = if full { channel.h().clone() } else { equivalent_channel(channel, &config.streams)? };
    let m = match kind {
        Baseline::Mrt => mrt(&h),
        Baseline::Zf => zf(&h)?,
        Baseline::Rzf => rzf(&h, rzf_mu.unwrap_or_else(|| default_rzf_mu(config)))?,
        Baseline::Ezf => unreachable!(),
    };
    Precoder::new(m, &config.streams)
}

/// Scales `P` to sum power exactly `P_max`.
pub fn normalize_spc(p: &Precoder, p_max: f64) -> Result<Precoder> {
    let power = sum_power(p);
    if !(power > 0.0) {
        return Err(Error::Domain("cannot normalize a zero precoder".into()));
    }
    Ok(p.scaled((p_max / power).sqrt()))
}

/// Scales `P` by `min_m √P_m / ‖p_m‖` so that the most loaded antenna sits
/// exactly at its budget.
pub fn normalize_papc(p: &Precoder, budgets: &[f64]) -> Result<Precoder> {
    if budgets.len() != p.antennas() {
        return Err(Error::Dimension(format!("{} budgets for {} antennas", budgets.len(), p.antennas())));
    }
    let factor = per_antenna_power(p)
        .iter()
        .zip(budgets)
        .filter(|(pw, _)| **pw > 0.0)
        .map(|(pw, b)| (b / pw).sqrt())
        .fold(f64::INFINITY, f64::min);
    if !factor.is_finite() {
        return Err(Error::Domain("cannot normalize a zero precoder".into()));
    }
    Ok(p.scaled(factor))
}
