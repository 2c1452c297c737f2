//! Shared domain types: system dimensions, channels, precoders, auxiliary
//! WMMSE state and solver traces.

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Relative threshold of the full-row-rank check on `H`.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateUnit {
    /// Natural-log units; every solver works in nats internally.
    #[default]
    Nats,
    /// Bits per channel use.
    Bpcu,
}

impl RateUnit {
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            RateUnit::Nats => nats,
            RateUnit::Bpcu => nats / std::f64::consts::LN_2,
        }
    }
}

/// Dimensions, weights, power budgets, noise powers and solver tolerances
/// of one downlink instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of BS antennas `M`.
    pub antennas: usize,
    /// Receive antennas per user `N_k`.
    pub rx_antennas: Vec<usize>,
    /// Data streams per user `D_k`.
    pub streams: Vec<usize>,
    /// User priority weights `α_k`.
    pub weights: Vec<f64>,
    /// Sum-power budget (W).
    pub p_max: f64,
    /// Per-antenna budgets `P_m` (W).
    pub antenna_budgets: Vec<f64>,
    /// Per-user noise powers `σ_k²` (W).
    pub noise: Vec<f64>,
    /// Stopping tolerance on the weighted log-det surrogate (nats).
    pub epsilon: f64,
    pub max_iters: usize,
    pub rate_unit: RateUnit,
}

impl SystemConfig {
    /// Equal weights, unit noise, `P_m = P_max / M`, `ε = 1e-6`.
    pub fn uniform(antennas: usize, users: usize, rx: usize, streams: usize, p_max: f64) -> Self {
        SystemConfig {
            antennas,
            rx_antennas: vec![rx; users],
            streams: vec![streams; users],
            weights: vec![1.0; users],
            p_max,
            antenna_budgets: vec![p_max / antennas as f64; antennas],
            noise: vec![1.0; users],
            epsilon: 1e-6,
            max_iters: 1000,
            rate_unit: RateUnit::Nats,
        }
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_tolerance(mut self, epsilon: f64, max_iters: usize) -> Self {
        self.epsilon = epsilon;
        self.max_iters = max_iters;
        self
    }

    pub fn users(&self) -> usize {
        self.rx_antennas.len()
    }

    /// `N = Σ N_k`.
    pub fn total_rx(&self) -> usize {
        self.rx_antennas.iter().sum()
    }

    /// `D = Σ D_k`.
    pub fn total_streams(&self) -> usize {
        self.streams.iter().sum()
    }

    pub fn rx_offsets(&self) -> Vec<usize> {
        linalg::offsets(&self.rx_antennas)
    }

    pub fn stream_offsets(&self) -> Vec<usize> {
        linalg::offsets(&self.streams)
    }

    /// Invariant violations of the configuration alone.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.users();
        if k == 0 {
            out.push("no users configured".to_string());
        }
        for (name, len) in [
            ("streams", self.streams.len()),
            ("weights", self.weights.len()),
            ("noise", self.noise.len()),
        ] {
            if len != k {
                out.push(format!("{name} has {len} entries, expected {k}"));
            }
        }
        if self.antenna_budgets.len() != self.antennas {
            out.push(format!(
                "antenna_budgets has {} entries, expected M = {}",
                self.antenna_budgets.len(),
                self.antennas
            ));
        }
        for (i, (&n, &d)) in self.rx_antennas.iter().zip(&self.streams).enumerate() {
            if d == 0 {
                out.push(format!("user {i}: D_k must be at least 1"));
            }
            if d > n {
                out.push(format!("user {i}: D_k exceeds N_k ({d} > {n})"));
            }
        }
        if self.total_rx() > self.antennas {
            out.push(format!("N = {} exceeds M = {}", self.total_rx(), self.antennas));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            out.push("P_max must be positive".to_string());
        }
        if self.antenna_budgets.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            out.push("per-antenna budgets must be positive".to_string());
        }
        if self.noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            out.push("noise powers must be positive".to_string());
        }
        if self.weights.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            out.push("weights must be nonnegative".to_string());
        }
        if self.weights.iter().all(|&a| a == 0.0) && k > 0 {
            out.push("at least one weight must be positive".to_string());
        }
        if !(self.epsilon > 0.0) {
            out.push("epsilon must be positive".to_string());
        }
        if self.max_iters == 0 {
            out.push("max_iters must be at least 1".to_string());
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Stacked channel `H` (N×M) with per-user row blocks and an optional
/// cached Gram matrix `H Hᴴ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h: CMat,
    rx_offsets: Vec<usize>,
    gram: Option<CMat>,
}

impl ChannelSet {
    pub fn new(h: CMat, rx_antennas: &[usize]) -> Result<Self> {
        let rx_offsets = linalg::offsets(rx_antennas);
        if *rx_offsets.last().unwrap() != h.nrows() {
            return Err(Error::Dimension(format!(
                "channel has {} rows but users need {}",
                h.nrows(),
                rx_offsets.last().unwrap()
            )));
        }
        Ok(ChannelSet { h, rx_offsets, gram: None })
    }

    /// Caches `H Hᴴ`.
    pub fn with_gram(mut self) -> Self {
        let mut g = &self.h * self.h.adjoint();
        linalg::hermitianize(&mut g);
        self.gram = Some(g);
        self
    }

    pub fn h(&self) -> &CMat {
        &self.h
    }

    pub fn gram(&self) -> Option<&CMat> {
        self.gram.as_ref()
    }

    pub fn users(&self) -> usize {
        self.rx_offsets.len() - 1
    }

    pub fn antennas(&self) -> usize {
        self.h.ncols()
    }

    pub fn total_rx(&self) -> usize {
        self.h.nrows()
    }

    pub fn rx_offsets(&self) -> &[usize] {
        &self.rx_offsets
    }

    pub fn rx_range(&self, k: usize) -> Range<usize> {
        self.rx_offsets[k]..self.rx_offsets[k + 1]
    }

    pub fn rx_antennas(&self) -> Vec<usize> {
        self.rx_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `H_k`, an `N_k × M` view.
    pub fn user(&self, k: usize) -> DMatrixView<'_, linalg::C64> {
        let r = self.rx_range(k);
        self.h.rows(r.start, r.len())
    }
}

/// Stacked precoder `P = [P_1, …, P_K]` (M×D).
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    matrix: CMat,
    stream_offsets: Vec<usize>,
}

impl Precoder {
    pub fn new(matrix: CMat, streams: &[usize]) -> Result<Self> {
        let stream_offsets = linalg::offsets(streams);
        if *stream_offsets.last().unwrap() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "precoder has {} columns but streams sum to {}",
                matrix.ncols(),
                stream_offsets.last().unwrap()
            )));
        }
        Ok(Precoder { matrix, stream_offsets })
    }

    pub fn zeros(antennas: usize, streams: &[usize]) -> Self {
        let d = streams.iter().sum();
        Precoder { matrix: CMat::zeros(antennas, d), stream_offsets: linalg::offsets(streams) }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMat {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn antennas(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn users(&self) -> usize {
        self.stream_offsets.len() - 1
    }

    pub fn stream_offsets(&self) -> &[usize] {
        &self.stream_offsets
    }

    pub fn streams(&self) -> Vec<usize> {
        self.stream_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn stream_range(&self, k: usize) -> Range<usize> {
        self.stream_offsets[k]..self.stream_offsets[k + 1]
    }

    /// `P_k`, an `M × D_k` view into the stacked matrix.
    pub fn block(&self, k: usize) -> DMatrixView<'_, linalg::C64> {
        let r = self.stream_range(k);
        self.matrix.columns(r.start, r.len())
    }

    pub fn block_mut(&mut self, k: usize) -> DMatrixViewMut<'_, linalg::C64> {
        let r = self.stream_range(k);
        self.matrix.columns_mut(r.start, r.len())
    }

    pub fn scaled(&self, factor: f64) -> Precoder {
        Precoder { matrix: &self.matrix * linalg::real(factor), stream_offsets: self.stream_offsets.clone() }
    }
}

/// `Σ_k Tr(P_k P_kᴴ) = ‖P‖_F²`.
pub fn sum_power(p: &Precoder) -> f64 {
    linalg::fro_norm_sq(p.matrix())
}

/// Per-antenna transmit powers `‖p_m‖²` (squared row norms of `P`).
pub fn per_antenna_power(p: &Precoder) -> Vec<f64> {
    let m = p.matrix();
    let mut out = vec![0.0; m.nrows()];
    for col in m.column_iter() {
        for (acc, z) in out.iter_mut().zip(col.iter()) {
            *acc += z.norm_sqr();
        }
    }
    out
}

/// `max_m ‖p_m‖² / P_m`; at most one for a PAPC-feasible precoder.
pub fn max_antenna_load(p: &Precoder, budgets: &[f64]) -> f64 {
    per_antenna_power(p)
        .iter()
        .zip(budgets)
        .map(|(pw, b)| pw / b)
        .fold(0.0, f64::max)
}

/// Reduced variable `X` (N×D); the induced precoder is `Hᴴ X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPrecoder {
    matrix: CMat,
    stream_offsets: Vec<usize>,
}

impl ReducedPrecoder {
    pub fn new(matrix: CMat, streams: &[usize]) -> Result<Self> {
        let stream_offsets = linalg::offsets(streams);
        if *stream_offsets.last().unwrap() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "reduced precoder has {} columns but streams sum to {}",
                matrix.ncols(),
                stream_offsets.last().unwrap()
            )));
        }
        Ok(ReducedPrecoder { matrix, stream_offsets })
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn stream_offsets(&self) -> &[usize] {
        &self.stream_offsets
    }

    pub fn streams(&self) -> Vec<usize> {
        self.stream_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn block(&self, k: usize) -> DMatrixView<'_, linalg::C64> {
        let (a, b) = (self.stream_offsets[k], self.stream_offsets[k + 1]);
        self.matrix.columns(a, b - a)
    }

    pub fn scaled(&self, factor: f64) -> ReducedPrecoder {
        ReducedPrecoder { matrix: &self.matrix * linalg::real(factor), stream_offsets: self.stream_offsets.clone() }
    }

    /// `Σ_k Tr(H̄ X_k X_kᴴ) = Re Tr(Xᴴ H̄ X)`.
    pub fn induced_power(&self, gram: &GramContext) -> f64 {
        let hx = gram.gram() * &self.matrix;
        linalg::real_inner(&self.matrix, &hx)
    }

    /// `Hᴴ X`.
    pub fn induced_precoder(&self, channel: &ChannelSet) -> Precoder {
        Precoder { matrix: channel.h().ad_mul(&self.matrix), stream_offsets: self.stream_offsets.clone() }
    }
}

/// The Gram channel `H̄ = H Hᴴ` with per-user row blocks and optional inverse.
#[derive(Debug, Clone)]
pub struct GramContext {
    gram: CMat,
    rx_offsets: Vec<usize>,
    inverse: Option<CMat>,
    build_seconds: f64,
}

impl GramContext {
    /// Builds `H Hᴴ` (cost `O(M N²)`), timing the construction.
    pub fn from_channel(channel: &ChannelSet) -> Result<Self> {
        let start = Instant::now();
        let mut gram = match channel.gram() {
            Some(g) => g.clone(),
            None => channel.h() * channel.h().adjoint(),
        };
        linalg::hermitianize(&mut gram);
        let build_seconds = start.elapsed().as_secs_f64();
        // Cholesky doubles as the positive-definiteness check.
        linalg::cholesky(&gram, "Gram channel H Hᴴ")?;
        Ok(GramContext { gram, rx_offsets: channel.rx_offsets().to_vec(), inverse: None, build_seconds })
    }

    /// Wraps an existing N×N Hermitian positive definite matrix.
    pub fn from_gram(gram: CMat, rx_antennas: &[usize]) -> Result<Self> {
        let rx_offsets = linalg::offsets(rx_antennas);
        if gram.nrows() != gram.ncols() || gram.nrows() != *rx_offsets.last().unwrap() {
            return Err(Error::Dimension("Gram matrix must be N×N".into()));
        }
        let mut gram = gram;
        linalg::hermitianize(&mut gram);
        linalg::cholesky(&gram, "Gram channel H Hᴴ")?;
        Ok(GramContext { gram, rx_offsets, inverse: None, build_seconds: 0.0 })
    }

    /// Caches `H̄⁻¹` for the Woodbury update path.
    pub fn with_inverse(mut self) -> Result<Self> {
        if self.inverse.is_none() {
            let start = Instant::now();
            self.inverse = Some(linalg::inverse_hpd(&self.gram, "Gram channel H Hᴴ")?);
            self.build_seconds += start.elapsed().as_secs_f64();
        }
        Ok(self)
    }

    pub fn gram(&self) -> &CMat {
        &self.gram
    }

    pub fn inverse(&self) -> Option<&CMat> {
        self.inverse.as_ref()
    }

    pub fn total_rx(&self) -> usize {
        self.gram.nrows()
    }

    pub fn users(&self) -> usize {
        self.rx_offsets.len() - 1
    }

    pub fn rx_offsets(&self) -> &[usize] {
        &self.rx_offsets
    }

    pub fn rx_range(&self, k: usize) -> Range<usize> {
        self.rx_offsets[k]..self.rx_offsets[k + 1]
    }

    /// `H̄_k = H_k Hᴴ`, an `N_k × N` row block.
    pub fn block(&self, k: usize) -> DMatrixView<'_, linalg::C64> {
        let r = self.rx_range(k);
        self.gram.rows(r.start, r.len())
    }

    /// Seconds spent forming `H̄` (and its inverse, when cached).
    pub fn build_seconds(&self) -> f64 {
        self.build_seconds
    }
}

/// Receive matrices `U_k` (N_k×D_k) and weights `W_k` (D_k×D_k).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    pub u: Vec<CMat>,
    pub w: Vec<CMat>,
}

impl AuxState {
    /// `U_k = 0`, `W_k = I`, the state every solver starts from.
    pub fn initial(rx_antennas: &[usize], streams: &[usize]) -> Self {
        AuxState {
            u: rx_antennas.iter().zip(streams).map(|(&n, &d)| CMat::zeros(n, d)).collect(),
            w: streams.iter().map(|&d| linalg::identity(d)).collect(),
        }
    }

    /// `Σ_k α_k log det W_k`.
    pub fn weighted_logdet(&self, weights: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (w, &a) in self.w.iter().zip(weights) {
            if a != 0.0 {
                acc += a * linalg::logdet_hpd(w, "MSE weight W_k")?;
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ToleranceMet,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// WSR of the iterate produced by this iteration, in the configured unit.
    pub wsr: f64,
    /// `Σ_k α_k log det W_k` after this iteration's weight update (nats).
    pub surrogate: f64,
    /// Wall time of the U/W/precoder updates (seconds).
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub total_wall_s: f64,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Largest decrease between consecutive surrogate values (0 if none).
    pub fn max_surrogate_drop(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].surrogate - w[1].surrogate)
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_surrogate_drop() <= slack
    }

    pub fn final_wsr(&self) -> Option<f64> {
        self.records.last().map(|r| r.wsr)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

/// Checks every configuration and channel invariant, reporting rather than
/// failing.
pub fn validate(config: &SystemConfig, channel: &ChannelSet) -> ValidationReport {
    let mut violations = config.violations();
    if channel.users() != config.users() {
        violations.push(format!("channel has {} users, config has {}", channel.users(), config.users()));
    } else if channel.rx_antennas() != config.rx_antennas {
        violations.push("channel row blocks do not match N_k".to_string());
    }
    if channel.antennas() != config.antennas {
        violations.push(format!("channel has {} columns, expected M = {}", channel.antennas(), config.antennas));
    }
    if !linalg::all_finite(channel.h()) {
        violations.push("channel contains non-finite entries".to_string());
    } else if channel.total_rx() > 0 {
        let s = linalg::singular_values(channel.h());
        let (largest, smallest) = (s[0], s[s.len() - 1]);
        if s.len() < channel.total_rx() || !(smallest > RANK_TOL * largest) {
            violations.push("H is not full row rank (rank failure)".to_string());
        }
    }
    if let Some(g) = channel.gram() {
        let direct = channel.h() * channel.h().adjoint();
        if linalg::rel_diff(g, &direct) > 1e-12 {
            violations.push("cached Gram matrix differs from H Hᴴ".to_string());
        }
        if !linalg::is_positive_definite(g) {
            violations.push("cached Gram matrix is not positive definite".to_string());
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use proptest::prelude::*;

    fn cmat(rows: usize, cols: usize, seed: u64) -> CMat {
        let mut s = seed;
        CMat::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            C64::new(a, b)
        })
    }

    #[test]
    fn validate_flags_streams_above_rx() {
        let mut cfg = SystemConfig::uniform(8, 1, 2, 2, 1.0);
        cfg.streams = vec![4];
        let ch = ChannelSet::new(cmat(2, 8, 1), &[2]).unwrap();
        assert!(validate(&cfg, &ch).mentions("D_k exceeds N_k"));
    }

    #[test]
    fn validate_accepts_square_full_rank() {
        let cfg = SystemConfig::uniform(8, 4, 2, 1, 1.0);
        let ch = ChannelSet::new(cmat(8, 8, 2), &[2; 4]).unwrap().with_gram();
        let report = validate(&cfg, &ch);
        assert!(report.is_ok(), "{:?}", report.violations);
    }

    #[test]
    fn validate_flags_duplicated_rows() {
        let cfg = SystemConfig::uniform(8, 2, 2, 1, 1.0);
        let mut h = cmat(4, 8, 3);
        let row = h.row(0).clone_owned();
        h.row_mut(2).copy_from(&row);
        let ch = ChannelSet::new(h, &[2, 2]).unwrap();
        assert!(validate(&cfg, &ch).mentions("rank failure"));
    }

    #[test]
    fn sum_power_of_zero_and_identity() {
        assert_eq!(sum_power(&Precoder::zeros(4, &[1, 1])), 0.0);
        let p = Precoder::new(linalg::identity(2), &[1, 1]).unwrap();
        assert_eq!(sum_power(&p), 2.0);
    }

    #[test]
    fn sum_power_matches_scalar_loop() {
        let m = cmat(8, 4, 9);
        let mut expect = 0.0;
        for i in 0..8 {
            for j in 0..4 {
                expect += m[(i, j)].re * m[(i, j)].re + m[(i, j)].im * m[(i, j)].im;
            }
        }
        let p = Precoder::new(m, &[2, 2]).unwrap();
        assert!((sum_power(&p) - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn per_antenna_power_single_row() {
        let mut m = CMat::zeros(3, 2);
        m[(1, 0)] = C64::new(1.0, 0.0);
        m[(1, 1)] = C64::new(0.0, 1.0);
        let p = Precoder::new(m, &[2]).unwrap();
        assert_eq!(per_antenna_power(&p), vec![0.0, 2.0, 0.0]);
        assert_eq!(per_antenna_power(&Precoder::zeros(3, &[2])), vec![0.0; 3]);
    }

    #[test]
    fn block_mutation_is_visible_in_stacked_matrix() {
        let mut p = Precoder::zeros(3, &[1, 2]);
        p.block_mut(1)[(2, 1)] = C64::new(5.0, -1.0);
        assert_eq!(p.matrix()[(2, 2)], C64::new(5.0, -1.0));
        assert_eq!(p.block(1).ncols(), 2);
    }

    #[test]
    fn trace_monotonicity_detects_drops() {
        let rec = |i, s| IterationRecord { iteration: i, wsr: 0.0, surrogate: s, wall_s: 0.0 };
        let trace = SolveTrace {
            records: vec![rec(1, 1.0), rec(2, 2.0), rec(3, 1.5)],
            termination: Termination::MaxIters,
            total_wall_s: 0.0,
        };
        assert!((trace.max_surrogate_drop() - 0.5).abs() < 1e-15);
        assert!(!trace.is_monotone(1e-9));
    }

    proptest! {
        #[test]
        fn antenna_powers_sum_to_total(seed in any::<u64>(), m in 1usize..10, d in 1usize..5) {
            let p = Precoder::new(cmat(m, d, seed), &[d]).unwrap();
            let total = sum_power(&p);
            let by_antenna: f64 = per_antenna_power(&p).iter().sum();
            prop_assert!((total - by_antenna).abs() <= 1e-12 * total.max(1e-300));
        }
    }
}
