//! Shared fixtures for the solver benchmarks.

use wsr_core::{calibrate_noise, generate_channel, rwmmse, wmmse, AuxState, ChannelGenSpec, ChannelSet, GramContext, SystemConfig};

/// Tolerance for end-to-end solves in benchmarks (nats).
pub const EPSILON: f64 = 1e-4;
/// Iteration cap for end-to-end solves, so one sample stays bounded.
pub const MAX_ITERS: usize = 50;

/// `K = 12` users with `N_k = 4`, `D_k = 2` at 10 dB, the desk version of the
/// reference downlink.
pub fn fixture(antennas: usize, seed: u64) -> (ChannelSet, SystemConfig) {
    shaped(antennas, 12, 4, 2, seed)
}

pub fn shaped(antennas: usize, users: usize, rx: usize, streams: usize, seed: u64) -> (ChannelSet, SystemConfig) {
    let cfg = SystemConfig::uniform(antennas, users, rx, streams, 10.0).with_tolerance(EPSILON, MAX_ITERS);
    let ch = generate_channel(&cfg, &ChannelGenSpec { seed, ..ChannelGenSpec::default() }, 0).expect("fixture channel");
    let noise = calibrate_noise(&ch, 10.0).expect("fixture noise");
    (ch, cfg.with_noise(noise))
}

/// Receivers and weights after one WMMSE step from ZF, a representative
/// mid-run state for single-update benchmarks.
pub fn warm_aux(channel: &ChannelSet, config: &SystemConfig) -> AuxState {
    let p = wmmse::zf_init(channel, config).expect("zf init");
    let u = wmmse::update_u(channel, &p, &config.noise).expect("receivers");
    let w = wmmse::update_w(channel, &p, &u).expect("weights");
    AuxState { u, w }
}

/// Same as [`warm_aux`] for the reduced problem.
pub fn warm_reduced_aux(channel: &ChannelSet, gram: &GramContext, config: &SystemConfig) -> AuxState {
    let p = wmmse::zf_init(channel, config).expect("zf init");
    let x = rwmmse::reduced_init(channel, gram, &p, config.p_max).expect("reduced init");
    let u = rwmmse::update_u_reduced(gram, &x, config).expect("receivers");
    let w = rwmmse::update_w_reduced(gram, &x, &u).expect("weights");
    AuxState { u, w }
}
