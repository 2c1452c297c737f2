//! Classic WMMSE under a sum-power constraint.
//!
//! Each iteration updates the receivers `U`, the weights `W`, then solves the
//! precoder subproblem exactly through an `M×M` eigendecomposition and a
//! bisection on the power multiplier. This is the cubic-in-`M` reference.

use std::time::Instant;

use crate::baselines::{self, Baseline};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::objective::{self, Signal};
use crate::types::{
    sum_power, AuxState, ChannelSet, IterationRecord, Precoder, SolveTrace, SystemConfig, Termination,
};

/// Relative eigenvalue floor below which directions of `J` count as null space.
const NULL_EIG: f64 = 1e-12;
const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_STEPS: usize = 400;

/// `U_k = S_k⁻¹ H_k P_k` for every user.
pub fn update_u(channel: &ChannelSet, p: &Precoder, noise: &[f64]) -> Result<Vec<CMat>> {
    let y = objective::received(channel, p)?;
    let sig = Signal::new(&y, channel.rx_offsets(), p.stream_offsets());
    (0..channel.users()).map(|k| sig.receiver(k, noise[k])).collect()
}

/// `W_k = (I − U_kᴴ H_k P_k)⁻¹` for every user.
pub fn update_w(channel: &ChannelSet, p: &Precoder, u: &[CMat]) -> Result<Vec<CMat>> {
    let y = objective::received(channel, p)?;
    let sig = Signal::new(&y, channel.rx_offsets(), p.stream_offsets());
    (0..channel.users()).map(|k| sig.weight(k, &u[k])).collect()
}

#[derive(Debug, Clone)]
pub struct SpcUpdate {
    pub precoder: Precoder,
    /// Power multiplier; zero when the unconstrained minimizer is feasible.
    pub mu: f64,
}

/// Exact minimizer of the weighted-MSE precoder subproblem under
/// `‖P‖_F² ≤ P_max`: `P(μ) = (J + μI)⁻¹ B` with
/// `J = Σ_k α_k H_kᴴ U_k W_k U_kᴴ H_k` and `B_k = α_k H_kᴴ U_k W_k`.
pub fn update_p_spc(channel: &ChannelSet, aux: &AuxState, config: &SystemConfig) -> Result<SpcUpdate> {
    let m = channel.antennas();
    let st = config.stream_offsets();
    let d = config.total_streams();
    let mut c = CMat::zeros(m, d);
    let mut b = CMat::zeros(m, d);
    for k in 0..config.users() {
        let ck = channel.user(k).ad_mul(&aux.u[k]);
        let bk = &ck * &aux.w[k] * linalg::real(config.weights[k]);
        c.columns_mut(st[k], ck.ncols()).copy_from(&ck);
        b.columns_mut(st[k], bk.ncols()).copy_from(&bk);
    }
    let mut j = &b * c.adjoint();
    linalg::hermitianize(&mut j);
    let eig = j.symmetric_eigen();
    let q = eig.eigenvectors.ad_mul(&b);
    let lam_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let kept: Vec<(usize, f64, f64)> = (0..m)
        .filter(|&i| lam_max > 0.0 && eig.eigenvalues[i] > NULL_EIG * lam_max)
        .map(|i| (i, eig.eigenvalues[i], q.row(i).norm_squared()))
        .collect();
    let power = |mu: f64| kept.iter().map(|&(_, l, qn)| qn / linalg::sq(l + mu)).sum::<f64>();
    let mu = solve_multiplier(power, config.p_max)?;
    let mut scaled = CMat::zeros(m, d);
    for &(i, l, _) in &kept {
        let row = q.row(i) / linalg::real(l + mu);
        scaled.row_mut(i).copy_from(&row);
    }
    let precoder = Precoder::new(&eig.eigenvectors * scaled, &config.streams)?;
    Ok(SpcUpdate { precoder, mu })
}

/// Smallest `μ ≥ 0` with `power(μ) ≤ p_max`, for strictly decreasing `power`.
/// The upper end of the final bracket is returned so the result is feasible.
pub fn solve_multiplier(power: impl Fn(f64) -> f64, p_max: f64) -> Result<f64> {
    if power(0.0) <= p_max {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while power(hi) > p_max {
        hi *= 2.0;
        doublings += 1;
        if doublings > 2100 || !hi.is_finite() {
            return Err(Error::Bisection("could not bracket the power multiplier".into()));
        }
    }
    let mut lo = if doublings == 0 { 0.0 } else { hi / 2.0 };
    for _ in 0..BISECTION_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if power(mid) > p_max {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL * hi {
            break;
        }
    }
    let p_hi = power(hi);
    if !(p_hi <= p_max) {
        return Err(Error::Bisection(format!("power {p_hi} above budget {p_max} at the bracket end")));
    }
    Ok(hi)
}

#[derive(Debug, Clone)]
pub struct SpcSolution {
    pub precoder: Precoder,
    pub aux: AuxState,
    pub trace: SolveTrace,
}

/// ZF (stream-selected when `D < N`) scaled to full power.
pub fn zf_init(channel: &ChannelSet, config: &SystemConfig) -> Result<Precoder> {
    baselines::normalize_spc(&baselines::baseline(Baseline::Zf, channel, config, None)?, config.p_max)
}

/// Runs U, W, P updates until the weighted log-det of `W` moves by at most
/// `ε` nats, or `max_iters` is reached.
pub fn solve(channel: &ChannelSet, config: &SystemConfig, init: &Precoder) -> Result<SpcSolution> {
    config.check()?;
    let power = sum_power(init);
    if power > config.p_max * (1.0 + 1e-10) {
        return Err(Error::Infeasible(format!("initial sum power {power} exceeds P_max = {}", config.p_max)));
    }
    if init.antennas() != config.antennas || init.streams() != config.streams {
        return Err(Error::Dimension("initial precoder does not match the configuration".into()));
    }
    let start = Instant::now();
    let mut p = init.clone();
    let mut aux = AuxState::initial(&config.rx_antennas, &config.streams);
    let mut prev = 0.0;
    let mut records = Vec::new();
    let mut termination = Termination::MaxIters;
    for iteration in 1..=config.max_iters {
        let t0 = Instant::now();
        aux.u = update_u(channel, &p, &config.noise)?;
        aux.w = update_w(channel, &p, &aux.u)?;
        let surrogate = aux.weighted_logdet(&config.weights)?;
        p = update_p_spc(channel, &aux, config)?.precoder;
        let wall_s = t0.elapsed().as_secs_f64();
        let wsr = objective::wsr(channel, &p, config)?;
        records.push(IterationRecord { iteration, wsr, surrogate, wall_s });
        if (surrogate - prev).abs() <= config.epsilon {
            termination = Termination::ToleranceMet;
            break;
        }
        prev = surrogate;
    }
    let trace = SolveTrace { records, termination, total_wall_s: start.elapsed().as_secs_f64() };
    Ok(SpcSolution { precoder: p, aux, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{calibrate_noise, generate_channel, ChannelGenSpec};
    use crate::objective::{kkt_residual_spc, mse_matrix, wsr_nats};
    use crate::verify::{random_cmat, rng};

    fn scalar(v: f64) -> CMat {
        CMat::from_element(1, 1, linalg::real(v))
    }

    fn instance(seed: u64, m: usize, users: usize, rx: usize, st: usize) -> (ChannelSet, SystemConfig) {
        let mut r = rng(seed);
        let ch = ChannelSet::new(random_cmat(&mut r, users * rx, m), &vec![rx; users]).unwrap();
        let mut cfg = SystemConfig::uniform(m, users, rx, st, 4.0);
        cfg.noise = vec![0.5; users];
        (ch, cfg)
    }

    fn aux_for(ch: &ChannelSet, p: &Precoder, cfg: &SystemConfig) -> AuxState {
        let u = update_u(ch, p, &cfg.noise).unwrap();
        let w = update_w(ch, p, &u).unwrap();
        AuxState { u, w }
    }

    #[test]
    fn zero_precoder_gives_zero_receiver_and_unit_weight() {
        let (ch, cfg) = instance(1, 6, 2, 2, 1);
        let p = Precoder::zeros(6, &cfg.streams);
        let aux = aux_for(&ch, &p, &cfg);
        assert!(aux.u.iter().all(|u| u.norm() == 0.0));
        assert!(aux.w.iter().all(|w| (w - linalg::identity(1)).norm() == 0.0));
    }

    #[test]
    fn scalar_walkthrough() {
        let ch = ChannelSet::new(scalar(1.0), &[1]).unwrap();
        let p = Precoder::new(scalar(1.0), &[1]).unwrap();
        let u = update_u(&ch, &p, &[1.0]).unwrap();
        assert!((u[0][(0, 0)].re - 0.5).abs() < 1e-15);
        let w = update_w(&ch, &p, &u).unwrap();
        assert!((w[0][(0, 0)].re - 2.0).abs() < 1e-15);
    }

    #[test]
    fn receiver_minimizes_mse_trace() {
        let (ch, cfg) = instance(2, 6, 3, 2, 2);
        let p = zf_init(&ch, &cfg).unwrap();
        let aux = aux_for(&ch, &p, &cfg);
        let mut r = rng(20);
        for k in 0..3 {
            let best = linalg::trace(&mse_matrix(k, &ch, &p, &aux, cfg.noise[k]).unwrap()).re;
            for _ in 0..100 {
                let mut probe = aux.clone();
                probe.u[k] += random_cmat(&mut r, 2, 2) * linalg::real(0.1);
                let t = linalg::trace(&mse_matrix(k, &ch, &p, &probe, cfg.noise[k]).unwrap()).re;
                assert!(t >= best - 1e-10);
            }
        }
    }

    #[test]
    fn weight_is_inverse_mse_at_fresh_receiver() {
        let (ch, cfg) = instance(3, 6, 3, 2, 2);
        let p = zf_init(&ch, &cfg).unwrap();
        let aux = aux_for(&ch, &p, &cfg);
        for k in 0..3 {
            let e = mse_matrix(k, &ch, &p, &aux, cfg.noise[k]).unwrap();
            let e_inv = linalg::inverse_hpd(&e, "E").unwrap();
            assert!((&aux.w[k] - e_inv).norm() <= 1e-9);
        }
    }

    #[test]
    fn zero_receivers_give_zero_precoder() {
        let (ch, cfg) = instance(4, 5, 2, 2, 1);
        let aux = AuxState::initial(&cfg.rx_antennas, &cfg.streams);
        let up = update_p_spc(&ch, &aux, &cfg).unwrap();
        assert_eq!(up.precoder.matrix().norm(), 0.0);
        assert_eq!(up.mu, 0.0);
    }

    #[test]
    fn scalar_precoder_against_hand_bisection() {
        // p(μ) = α h u w / (α h² u² w + μ).
        let (h, u, w, alpha) = (2.0, 0.8, 3.0, 1.5);
        let ch = ChannelSet::new(scalar(h), &[1]).unwrap();
        let aux = AuxState { u: vec![scalar(u)], w: vec![scalar(w)] };
        for p_max in [100.0, 0.01] {
            let mut cfg = SystemConfig::uniform(1, 1, 1, 1, p_max);
            cfg.weights = vec![alpha];
            let got = update_p_spc(&ch, &aux, &cfg).unwrap();
            let pf = |mu: f64| alpha * h * u * w / (alpha * h * h * u * u * w + mu);
            let (mut lo, mut hi) = (0.0, 1e6);
            let expect = if pf(0.0).powi(2) <= p_max {
                pf(0.0)
            } else {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if pf(mid).powi(2) > p_max { lo = mid } else { hi = mid }
                }
                pf(hi)
            };
            assert!((got.precoder.matrix()[(0, 0)].re - expect).abs() < 1e-9 * expect);
        }
    }

    /// Weighted-MSE precoder objective `Tr(Pᴴ J P) − 2 Re Tr(Bᴴ P)`.
    fn quad(j: &CMat, b: &CMat, p: &CMat) -> f64 {
        linalg::real_inner(p, &(j * p)) - 2.0 * linalg::real_inner(b, p)
    }

    #[test]
    fn precoder_matches_projected_gradient() {
        let (ch, mut cfg) = instance(5, 4, 2, 2, 1);
        cfg.p_max = 0.05;
        let p0 = zf_init(&ch, &SystemConfig { p_max: 4.0, ..cfg.clone() }).unwrap();
        let aux = aux_for(&ch, &p0, &cfg);
        let got = update_p_spc(&ch, &aux, &cfg).unwrap();
        // Independent J, B from a dense loop.
        let mut j = CMat::zeros(4, 4);
        let mut b = CMat::zeros(4, 2);
        for k in 0..2 {
            let hk = ch.user(k).clone_owned();
            let t = hk.adjoint() * &aux.u[k];
            j += &t * &aux.w[k] * t.adjoint() * linalg::real(cfg.weights[k]);
            b.column_mut(k).copy_from(&(&t * &aux.w[k] * linalg::real(cfg.weights[k])).column(0));
        }
        let step = 1.0 / j.clone().symmetric_eigenvalues().max();
        let project = |p: CMat| {
            let n = p.norm_squared();
            if n > cfg.p_max { p * linalg::real((cfg.p_max / n).sqrt()) } else { p }
        };
        // FISTA.
        let mut x = CMat::zeros(4, 2);
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..20000 {
            let grad = (&j * &y - &b) * linalg::real(2.0);
            let next = project(&y - grad * linalg::real(step / 2.0));
            let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &next + (&next - &x) * linalg::real((t - 1.0) / tn);
            x = next;
            t = tn;
        }
        let a = quad(&j, &b, got.precoder.matrix());
        let o = quad(&j, &b, &x);
        assert!(a <= o + 1e-6 * o.abs());
        assert!(got.mu > 0.0);
        assert!((sum_power(&got.precoder) - cfg.p_max).abs() <= 1e-10 * cfg.p_max);
        // First-order condition (J + μI) P = B.
        let r = (&j + linalg::identity(4) * linalg::real(got.mu)) * got.precoder.matrix() - &b;
        assert!(r.norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn single_user_reaches_capacity() {
        let mut r = rng(6);
        let h = random_cmat(&mut r, 1, 5);
        let ch = ChannelSet::new(h.clone(), &[1]).unwrap();
        let mut cfg = SystemConfig::uniform(5, 1, 1, 1, 2.0).with_tolerance(1e-12, 1000);
        cfg.noise = vec![0.3];
        let out = solve(&ch, &cfg, &zf_init(&ch, &cfg).unwrap()).unwrap();
        let cap = (1.0 + cfg.p_max * h.norm_squared() / 0.3).ln();
        assert!((out.trace.final_wsr().unwrap() - cap).abs() <= 1e-6 * cap);
    }

    #[test]
    fn huge_epsilon_stops_after_one_iteration() {
        let (ch, cfg) = instance(7, 8, 2, 2, 2);
        let cfg = cfg.with_tolerance(1e9, 100);
        let out = solve(&ch, &cfg, &zf_init(&ch, &cfg).unwrap()).unwrap();
        assert_eq!(out.trace.iterations(), 1);
        assert_eq!(out.trace.termination, Termination::ToleranceMet);
    }

    #[test]
    fn rejects_infeasible_init() {
        let (ch, cfg) = instance(8, 6, 2, 2, 1);
        let init = zf_init(&ch, &cfg).unwrap().scaled(2.0);
        assert!(matches!(solve(&ch, &cfg, &init), Err(Error::Infeasible(_))));
    }

    #[test]
    fn iterates_are_monotone_feasible_and_stationary() {
        let mut cfg = SystemConfig::uniform(16, 4, 2, 1, 10.0).with_tolerance(1e-10, 5000);
        let ch = generate_channel(&cfg, &ChannelGenSpec { seed: 9, ..Default::default() }, 0).unwrap();
        cfg.noise = calibrate_noise(&ch, 10.0).unwrap();
        let out = solve(&ch, &cfg, &zf_init(&ch, &cfg).unwrap()).unwrap();
        assert!(out.trace.is_monotone(1e-9));
        assert!(sum_power(&out.precoder) <= cfg.p_max * (1.0 + 1e-10));
        assert!((sum_power(&out.precoder) - cfg.p_max).abs() <= 1e-6 * cfg.p_max);
        let kkt = kkt_residual_spc(&ch, &out.precoder, &cfg).unwrap();
        assert!(kkt.residual <= 1e-4, "{kkt:?}");
    }

    #[test]
    fn surrogate_equals_wsr_of_previous_iterate() {
        let (ch, cfg) = instance(10, 8, 3, 2, 2);
        let mut p = zf_init(&ch, &cfg).unwrap();
        for _ in 0..5 {
            let aux = aux_for(&ch, &p, &cfg);
            let s = aux.weighted_logdet(&cfg.weights).unwrap();
            assert!((s - wsr_nats(&ch, &p, &cfg).unwrap()).abs() < 1e-8);
            p = update_p_spc(&ch, &aux, &cfg).unwrap().precoder;
        }
    }
}
