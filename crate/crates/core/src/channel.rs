//! Random channel realizations with distance-based pathloss, and noise
//! calibration to a target average receive SNR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::types::{validate, ChannelSet, SystemConfig};

/// Regeneration attempts before a rank-deficient draw becomes an error.
pub const MAX_RANK_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelGenSpec {
    /// Uniform user distance range in km.
    pub distance_km: (f64, f64),
    pub pathloss_intercept_db: f64,
    /// dB per decade of distance.
    pub pathloss_slope_db: f64,
    pub snr_db: f64,
    pub seed: u64,
    /// Draw fresh user distances for every realization; otherwise distances
    /// depend on the seed only.
    pub resample_distances: bool,
}

impl Default for ChannelGenSpec {
    fn default() -> Self {
        ChannelGenSpec {
            distance_km: (0.1, 0.3),
            pathloss_intercept_db: 128.1,
            pathloss_slope_db: 37.6,
            snr_db: 10.0,
            seed: 0,
            resample_distances: true,
        }
    }
}

impl ChannelGenSpec {
    pub fn check(&self) -> Result<()> {
        let (lo, hi) = self.distance_km;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(vec![format!("distance range ({lo}, {hi}) km must lie in (0, ∞)")]));
        }
        Ok(())
    }

    /// Pathloss in dB at distance `km`.
    pub fn pathloss_db(&self, km: f64) -> f64 {
        self.pathloss_intercept_db + self.pathloss_slope_db * km.log10()
    }
}

/// Amplitude scale `10^(−L/20)` for a pathloss of `L` dB.
pub fn amplitude_scale(pathloss_db: f64) -> f64 {
    10f64.powf(-pathloss_db / 20.0)
}

const TAG_DISTANCE: u64 = 0x6469_7374;
const TAG_ENTRIES: u64 = 0x6368_616e;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one (seed, realization, user, stream) key.
fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    let key = parts.iter().fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)));
    ChaCha8Rng::seed_from_u64(key)
}

/// Per-user distances (km) for a realization.
pub fn user_distances(spec: &ChannelGenSpec, realization: u64, users: usize) -> Vec<f64> {
    let (lo, hi) = spec.distance_km;
    let slot = if spec.resample_distances { realization } else { u64::MAX };
    (0..users)
        .map(|k| {
            let mut rng = keyed_rng(&[spec.seed, slot, k as u64, TAG_DISTANCE]);
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

fn draw(config: &SystemConfig, spec: &ChannelGenSpec, realization: u64, attempt: u64, distances: &[f64]) -> Result<ChannelSet> {
    let n = config.total_rx();
    let offsets = config.rx_offsets();
    let mut h = CMat::zeros(n, config.antennas);
    let std = std::f64::consts::FRAC_1_SQRT_2;
    for (k, &dist) in distances.iter().enumerate() {
        let scale = amplitude_scale(spec.pathloss_db(dist)) * std;
        let mut rng = keyed_rng(&[spec.seed, realization, k as u64, attempt, TAG_ENTRIES]);
        // Column-major fill keeps the stream layout independent of M for a row.
        for j in 0..config.antennas {
            for i in offsets[k]..offsets[k + 1] {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                h[(i, j)] = C64::new(re * scale, im * scale);
            }
        }
    }
    ChannelSet::new(h, &config.rx_antennas)
}

/// Draws `H` for `realization`: each user's entries are i.i.d. `CN(0, 1)`
/// scaled by its pathloss amplitude. Deterministic in `(seed, realization)`;
/// rank-deficient draws are regenerated up to [`MAX_RANK_RETRIES`] times.
pub fn generate_channel(config: &SystemConfig, spec: &ChannelGenSpec, realization: u64) -> Result<ChannelSet> {
    spec.check()?;
    let mut shape_only = config.clone();
    shape_only.noise = vec![1.0; config.users()];
    let structural: Vec<String> = shape_only.violations();
    if !structural.is_empty() {
        return Err(Error::InvalidConfig(structural));
    }
    let distances = user_distances(spec, realization, config.users());
    for attempt in 0..=MAX_RANK_RETRIES as u64 {
        let channel = draw(config, spec, realization, attempt, &distances)?;
        if validate(&shape_only, &channel).is_ok() {
            return Ok(channel);
        }
    }
    Err(Error::RankDeficient { attempts: MAX_RANK_RETRIES + 1 })
}

/// Common noise power giving average receive SNR `snr_db` without precoding:
/// `σ² = 10^{(1/K) Σ_k log10(‖H_k‖_F² / N_k)} · 10^{−SNR/10}`.
pub fn calibrate_noise(channel: &ChannelSet, snr_db: f64) -> Result<Vec<f64>> {
    let k = channel.users();
    let mut mean_log = 0.0;
    for user in 0..k {
        let hk = channel.user(user);
        let energy: f64 = hk.iter().map(|z| z.norm_sqr()).sum();
        if !(energy > 0.0) {
            return Err(Error::Domain(format!("user {user} has an all-zero channel")));
        }
        mean_log += (energy / hk.nrows() as f64).log10();
    }
    mean_log /= k as f64;
    let sigma2 = 10f64.powf(mean_log) * 10f64.powf(-snr_db / 10.0);
    Ok(vec![sigma2; k])
}
