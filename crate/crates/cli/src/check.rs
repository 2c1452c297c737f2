//! Self-check suites over the objective, gradient and solver oracles.

use std::fmt;

use rand::Rng;
use serde::Serialize;
use wsr_core::objective::{self, kkt_residual_spc, reduced_objective, subspace_residual, unconstrained_gradient, wsr_gradient, wsr_nats};
use wsr_core::verify::{fd_gradient, random_cmat, random_hpd, relative_step, rng};
use wsr_core::{
    calibrate_noise, generate_channel, linalg, rwmmse, sum_power, wmmse, AuxState, ChannelGenSpec, ChannelSet, CMat,
    GramContext, Precoder, ReducedPrecoder, SystemConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    fn pick(self, fast: usize, full: usize) -> usize {
        match self {
            Level::Fast => fast,
            Level::Full => full,
        }
    }
}

/// Replaceable numerical kernels, so a deliberately broken one can be checked
/// to trip the suites.
#[derive(Clone, Copy)]
pub struct Kernels {
    /// Optimal weight from an MSE matrix: `W = E⁻¹`.
    pub update_w: fn(&CMat) -> wsr_core::Result<CMat>,
}

fn inverse_weight(e: &CMat) -> wsr_core::Result<CMat> {
    let mut w = linalg::inverse_hpd(e, "MSE matrix")?;
    linalg::hermitianize(&mut w);
    Ok(w)
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels { update_w: inverse_weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest measured residual over all cases.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub level: Level,
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let verdict = if s.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {:<22} cases={:<4} worst={:.3e} tol={:.0e} {}", s.name, s.cases, s.worst, s.tolerance, s.detail)?;
        }
        Ok(())
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
    errors: Vec<String>,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally { name, tolerance, cases: 0, worst: 0.0, errors: Vec::new() }
    }

    fn observe(&mut self, r: wsr_core::Result<f64>) {
        self.cases += 1;
        match r {
            Ok(v) if v.is_nan() => self.errors.push("residual is NaN".into()),
            Ok(v) => self.worst = self.worst.max(v),
            Err(e) => self.errors.push(e.to_string()),
        }
    }

    fn finish(self) -> SuiteResult {
        let passed = self.errors.is_empty() && self.worst <= self.tolerance;
        let detail = self.errors.first().map(|e| format!("error: {e}")).unwrap_or_default();
        SuiteResult { name: self.name, passed, cases: self.cases, worst: self.worst, tolerance: self.tolerance, detail }
    }
}

fn logdet_identity_suite(level: Level, kernels: &Kernels) -> SuiteResult {
    let mut t = Tally::new("logdet-identity", 1e-10);
    let mut r = rng(101);
    let probes = level.pick(200, 1000);
    for case in 0..100 {
        let (n, p, l) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
        let a = random_cmat(&mut r, n, p);
        let b = random_cmat(&mut r, p, l);
        let nn = random_hpd(&mut r, n, 0.5);
        let probes_here = if case == 0 { probes } else { probes / 100 };
        let mut probe_rng = rng(1000 + case);
        t.observe((|| {
            let lhs = objective::logdet_identity_lhs(&a, &b, &nn)?;
            let gamma = objective::logdet_identity_gamma(&a, &b, &nn)?;
            let omega = (kernels.update_w)(&objective::logdet_identity_mse(&a, &b, &nn, &gamma)?)?;
            let mut worst = (lhs - objective::logdet_identity_rhs(&a, &b, &nn, &gamma, &omega)?).abs();
            for _ in 0..probes_here {
                let g = random_cmat(&mut probe_rng, n, l);
                let w = random_hpd(&mut probe_rng, l, 0.1);
                worst = worst.max(objective::logdet_identity_rhs(&a, &b, &nn, &g, &w)? - lhs);
            }
            Ok(worst)
        })());
    }
    t.finish()
}

fn instance(seed: u64, m: usize, rx: &[usize], st: &[usize]) -> (ChannelSet, SystemConfig) {
    let mut r = rng(seed);
    let n: usize = rx.iter().sum();
    let ch = ChannelSet::new(random_cmat(&mut r, n, m), rx).unwrap();
    let mut cfg = SystemConfig::uniform(m, rx.len(), rx[0], st[0], 2.0);
    cfg.rx_antennas = rx.to_vec();
    cfg.streams = st.to_vec();
    cfg.noise = (0..rx.len()).map(|k| 0.3 + 0.2 * k as f64).collect();
    cfg.weights = (0..rx.len()).map(|k| 1.0 + 0.5 * k as f64).collect();
    (ch, cfg)
}

const SHAPES: [(usize, &[usize], &[usize]); 5] = [
    (4, &[1, 1], &[1, 1]),
    (6, &[2, 2], &[1, 2]),
    (7, &[2, 1, 2], &[2, 1, 1]),
    (8, &[3, 2], &[2, 2]),
    (9, &[2, 2, 2], &[2, 2, 2]),
];

fn gradient_suite(level: Level) -> SuiteResult {
    let mut t = Tally::new("gradient-oracles", 1e-5);
    for case in 0..level.pick(5, 20) {
        let (m, rx, st) = SHAPES[case % SHAPES.len()];
        let (ch, cfg) = instance(200 + case as u64, m, rx, st);
        let d: usize = st.iter().sum();
        let n: usize = rx.iter().sum();
        let mut r = rng(300 + case as u64);
        t.observe((|| {
            let p = Precoder::new(random_cmat(&mut r, m, d) * linalg::real(0.5), st)?;
            let g = wsr_gradient(&ch, &p, &cfg)?.stacked();
            let f = |x: &CMat| Precoder::new(x.clone(), st).and_then(|q| wsr_nats(&ch, &q, &cfg)).unwrap_or(f64::NAN);
            let fd = fd_gradient(f, p.matrix(), relative_step(p.matrix(), 1e-5));
            let full = (&g - &fd).norm() / g.norm();

            let gram = GramContext::from_channel(&ch)?;
            let x = ReducedPrecoder::new(random_cmat(&mut r, n, d), st)?;
            let blocks = unconstrained_gradient(&gram, &x, &cfg)?;
            let mut stacked = CMat::zeros(n, d);
            let mut c = 0;
            for b in &blocks {
                stacked.columns_mut(c, b.ncols()).copy_from(b);
                c += b.ncols();
            }
            let f = |y: &CMat| ReducedPrecoder::new(y.clone(), st).and_then(|q| reduced_objective(&gram, &q, &cfg)).unwrap_or(f64::NAN);
            let fd = fd_gradient(f, x.matrix(), relative_step(x.matrix(), 1e-5));
            Ok(full.max((&stacked - &fd).norm() / stacked.norm()))
        })());
    }
    t.finish()
}

fn structure_suite(level: Level) -> Vec<SuiteResult> {
    let mut sub = Tally::new("subspace", 1e-9);
    let mut pow = Tally::new("full-power", 1e-12);
    for case in 0..level.pick(3, 10) {
        let (m, rx, st) = SHAPES[case % SHAPES.len()];
        let (ch, cfg) = instance(400 + case as u64, m + 4, rx, st);
        match wmmse::zf_init(&ch, &cfg).and_then(|init| rwmmse::solve(&ch, &cfg, &init, rwmmse::XUpdate::Auto)) {
            Ok(out) => {
                sub.observe(subspace_residual(&ch, &out.precoder));
                pow.observe(Ok((sum_power(&out.precoder) - cfg.p_max).abs() / cfg.p_max));
            }
            Err(e) => {
                sub.observe(Err(e));
                pow.cases += 1;
            }
        }
    }
    vec![sub.finish(), pow.finish()]
}

fn woodbury_suite(level: Level) -> SuiteResult {
    let mut t = Tally::new("compact-vs-woodbury", 1e-8);
    for case in 0..level.pick(10, 50) {
        let (m, rx, st) = SHAPES[case % SHAPES.len()];
        let (ch, cfg) = instance(500 + case as u64, m, rx, st);
        t.observe((|| {
            let gram = GramContext::from_channel(&ch)?.with_inverse()?;
            let x = rwmmse::reduced_init(&ch, &gram, &wmmse::zf_init(&ch, &cfg)?, cfg.p_max)?;
            let u = rwmmse::update_u_reduced(&gram, &x, &cfg)?;
            let w = rwmmse::update_w_reduced(&gram, &x, &u)?;
            let aux = AuxState { u, w };
            let a = rwmmse::update_x_compact(&gram, &aux, &cfg)?;
            let b = rwmmse::update_x_woodbury(&gram, &aux, &cfg)?;
            Ok((a.matrix() - b.matrix()).norm() / a.matrix().norm().max(1.0))
        })());
    }
    t.finish()
}

fn desk_instance(seed: u64, epsilon: f64) -> wsr_core::Result<(ChannelSet, SystemConfig)> {
    let cfg = SystemConfig::uniform(16, 4, 2, 2, 10.0).with_tolerance(epsilon, 5000);
    let ch = generate_channel(&cfg, &ChannelGenSpec { seed, ..ChannelGenSpec::default() }, 0)?;
    let noise = calibrate_noise(&ch, 10.0)?;
    Ok((ch, cfg.with_noise(noise)))
}

fn agreement_suite(level: Level) -> Vec<SuiteResult> {
    let mut agree = Tally::new("cross-algorithm", 1e-3);
    let mut mono = Tally::new("monotone-surrogate", 1e-9);
    for seed in 0..level.pick(1, 3) as u64 {
        let result = desk_instance(seed, 1e-8).and_then(|(ch, cfg)| {
            let init = wmmse::zf_init(&ch, &cfg)?;
            let a = wmmse::solve(&ch, &cfg, &init)?;
            let b = rwmmse::solve(&ch, &cfg, &init, rwmmse::XUpdate::Auto)?;
            let (ra, rb) = (wsr_nats(&ch, &a.precoder, &cfg)?, wsr_nats(&ch, &b.precoder, &cfg)?);
            Ok(((ra - rb).abs() / ra, a.trace.max_surrogate_drop().max(b.trace.max_surrogate_drop())))
        });
        match result {
            Ok((gap, drop)) => {
                agree.observe(Ok(gap));
                mono.observe(Ok(drop));
            }
            Err(e) => {
                agree.observe(Err(e));
                mono.cases += 1;
            }
        }
    }
    vec![agree.finish(), mono.finish()]
}

fn stationarity_suite() -> SuiteResult {
    let mut t = Tally::new("kkt-stationarity", 1e-4);
    t.observe((|| {
        let (ch, cfg) = desk_instance(0, 1e-10)?;
        let init = wmmse::zf_init(&ch, &cfg)?;
        let a = wmmse::solve(&ch, &cfg, &init)?;
        let b = rwmmse::solve(&ch, &cfg, &init, rwmmse::XUpdate::Auto)?;
        Ok(kkt_residual_spc(&ch, &a.precoder, &cfg)?.residual.max(kkt_residual_spc(&ch, &b.precoder, &cfg)?.residual))
    })());
    t.finish()
}

pub fn check_with(level: Level, kernels: &Kernels) -> CheckReport {
    let mut suites = vec![logdet_identity_suite(level, kernels), gradient_suite(level)];
    suites.extend(structure_suite(level));
    suites.push(woodbury_suite(level));
    suites.extend(agreement_suite(level));
    if level == Level::Full {
        suites.push(stationarity_suite());
    }
    CheckReport { level, suites }
}

pub fn check(level: Level) -> CheckReport {
    check_with(level, &Kernels::default())
}
