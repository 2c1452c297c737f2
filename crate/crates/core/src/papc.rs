//! WMMSE under per-antenna power constraints.
//!
//! The precoder block is split further into the `M` antenna rows
//! `p_m` (column `m` of `Pᴴ`). Each row subproblem is a projection onto a
//! ball with a closed-form solution, and the cross term
//! `C = Σ_l p_l h_lᴴ = Pᴴ Hᴴ` is maintained by rank-one updates, so one
//! sweep over all antennas costs `O(M N D)`.

use std::time::Instant;

use nalgebra::{DVectorView, DVectorViewMut};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, ONE, ZERO};
use crate::objective::{self, Signal};
use crate::types::{
    max_antenna_load, AuxState, ChannelSet, IterationRecord, Precoder, SolveTrace, SystemConfig, Termination,
};

/// Block-diagonal matrix stored as its blocks.
#[derive(Debug, Clone)]
pub struct BlockDiag {
    blocks: Vec<CMat>,
    row_off: Vec<usize>,
    col_off: Vec<usize>,
}

impl BlockDiag {
    pub fn new(blocks: Vec<CMat>) -> Self {
        let row_off = linalg::offsets(&blocks.iter().map(|b| b.nrows()).collect::<Vec<_>>());
        let col_off = linalg::offsets(&blocks.iter().map(|b| b.ncols()).collect::<Vec<_>>());
        BlockDiag { blocks, row_off, col_off }
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn nrows(&self) -> usize {
        *self.row_off.last().unwrap()
    }

    pub fn ncols(&self) -> usize {
        *self.col_off.last().unwrap()
    }

    pub fn to_dense(&self) -> CMat {
        linalg::block_diag(&self.blocks)
    }

    /// `out = β·out + α·(self · x)`, touching only the diagonal blocks.
    pub fn gemv_into(&self, alpha: linalg::C64, x: &DVectorView<'_, linalg::C64>, beta: linalg::C64, out: &mut CVec) {
        for (k, blk) in self.blocks.iter().enumerate() {
            let xs = x.rows(self.col_off[k], blk.ncols());
            out.rows_mut(self.row_off[k], blk.nrows()).gemv(alpha, blk, &xs, beta);
        }
    }

    /// Complex multiply-adds of one matrix-vector product.
    pub fn flops(&self) -> u64 {
        self.blocks.iter().map(|b| (b.nrows() * b.ncols()) as u64).sum()
    }
}

/// `A = blkdiag(α_k U_k W_k U_kᴴ)` (N×N) and `B = blkdiag(α_k W_k U_kᴴ)` (D×N).
pub fn build_ab(aux: &AuxState, config: &SystemConfig) -> (BlockDiag, BlockDiag) {
    let mut a = Vec::with_capacity(config.users());
    let mut b = Vec::with_capacity(config.users());
    for k in 0..config.users() {
        let alpha = linalg::real(config.weights[k]);
        let wu = &aux.w[k] * aux.u[k].adjoint() * alpha;
        let mut ak = &aux.u[k] * &wu;
        linalg::hermitianize(&mut ak);
        a.push(ak);
        b.push(wu);
    }
    (BlockDiag::new(a), BlockDiag::new(b))
}

/// Minimizer of `a‖p‖² + 2 Re(bᴴp)` over `‖p‖² ≤ budget`:
/// `p = −b · min(1/a, √budget / ‖b‖)`. With `b = 0` the minimizer is `0`; with
/// `a = 0` only the boundary term remains.
pub fn antenna_update(a: f64, b: &CVec, budget: f64) -> CVec {
    let mut out = CVec::zeros(b.len());
    antenna_update_into(a, &b.as_view(), budget, &mut out.as_view_mut());
    out
}

fn antenna_update_into(a: f64, b: &DVectorView<'_, linalg::C64>, budget: f64, out: &mut DVectorViewMut<'_, linalg::C64>) -> bool {
    let nb = b.norm();
    if nb == 0.0 {
        out.fill(ZERO);
        return false;
    }
    let boundary = budget.sqrt() / nb;
    let (factor, clamped) = if a > 0.0 && 1.0 / a <= boundary { (1.0 / a, false) } else { (boundary, true) };
    out.zip_apply(b, |o, bi| *o = -bi * factor);
    clamped
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaStep {
    pub a: f64,
    pub b_norm: f64,
    /// Whether the budget constraint is active at the new `p_m`.
    pub clamped: bool,
}

/// `A`, `B`, the maintained cross term `C` and per-antenna scratch vectors.
#[derive(Debug, Clone)]
pub struct SweepWorkspace {
    pub a: BlockDiag,
    pub b: BlockDiag,
    /// `C = Σ_l p_l h_lᴴ` (D×N).
    pub c: CMat,
    ah: CVec,
    bv: CVec,
    pv: CVec,
    /// Complex multiply-adds performed since construction.
    pub flops: u64,
}

impl SweepWorkspace {
    /// `y = H P` seeds `C = yᴴ`.
    pub fn new(aux: &AuxState, config: &SystemConfig, y: &CMat) -> Self {
        let (a, b) = build_ab(aux, config);
        let (n, d) = (a.nrows(), b.nrows());
        SweepWorkspace {
            a,
            b,
            c: y.adjoint(),
            ah: CVec::zeros(n),
            bv: CVec::zeros(d),
            pv: CVec::zeros(d),
            flops: 0,
        }
    }

    /// Closed-form update of `p_m` (column `m` of `ph = Pᴴ`), keeping `C` in sync.
    pub fn antenna_step(&mut self, m: usize, h: &ChannelSet, ph: &mut CMat, budget: f64) -> AntennaStep {
        let hm = h.h().column(m);
        let (n, d) = (self.c.ncols() as u64, self.c.nrows() as u64);
        self.a.gemv_into(ONE, &hm, ZERO, &mut self.ah);
        let a = hm.dotc(&self.ah).re;
        self.pv.copy_from(&ph.column(m));
        self.c.gerc(-ONE, &self.pv, &hm, ONE);
        self.bv.gemv(ONE, &self.c, &self.ah, ZERO);
        self.b.gemv_into(-ONE, &hm, ONE, &mut self.bv);
        let b_norm = self.bv.norm();
        let clamped = antenna_update_into(a, &self.bv.as_view(), budget, &mut self.pv.as_view_mut());
        ph.column_mut(m).copy_from(&self.pv);
        self.c.gerc(ONE, &self.pv, &hm, ONE);
        self.flops += self.a.flops() + n + 3 * n * d + self.b.flops() + 2 * d;
        AntennaStep { a, b_norm, clamped }
    }
}

/// Visits `m = 0, 1, …, M−1` once, in order.
pub fn sweep_antennas(ws: &mut SweepWorkspace, channel: &ChannelSet, ph: &mut CMat, budgets: &[f64]) {
    for (m, &budget) in budgets.iter().enumerate().take(channel.antennas()) {
        ws.antenna_step(m, channel, ph, budget);
    }
}

/// `Σ_k α_k (Tr(W_k E_k) − log det W_k)` at fixed `(U, W)`; each antenna step
/// can only lower it.
pub fn surrogate(channel: &ChannelSet, p: &Precoder, aux: &AuxState, config: &SystemConfig) -> Result<f64> {
    let y = objective::received(channel, p)?;
    let sig = Signal::new(&y, channel.rx_offsets(), p.stream_offsets());
    let mut acc = 0.0;
    for k in 0..config.users() {
        let alpha = config.weights[k];
        if alpha != 0.0 {
            let e = sig.mse(k, &aux.u[k], config.noise[k]);
            acc += alpha * (linalg::trace(&(&aux.w[k] * e)).re - linalg::logdet_hpd(&aux.w[k], "MSE weight W_k")?);
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct PapcSolution {
    pub precoder: Precoder,
    pub aux: AuxState,
    pub trace: SolveTrace,
    /// Counted complex multiply-adds per outer iteration.
    pub flops: Vec<u64>,
}

/// Alternates U and W updates with one antenna sweep per iteration until the
/// weighted log-det of `W` moves by at most `ε`.
pub fn solve(channel: &ChannelSet, config: &SystemConfig, init: &Precoder) -> Result<PapcSolution> {
    config.check()?;
    if init.antennas() != config.antennas || init.streams() != config.streams {
        return Err(Error::Dimension("initial precoder does not match the configuration".into()));
    }
    let load = max_antenna_load(init, &config.antenna_budgets);
    if load > 1.0 + 1e-10 {
        return Err(Error::Infeasible(format!("initial precoder loads an antenna to {load} × its budget")));
    }
    let start = Instant::now();
    let (m, n, d) = (config.antennas as u64, config.total_rx() as u64, config.total_streams() as u64);
    let rx = channel.rx_offsets();
    let st = config.stream_offsets();
    let mut ph = init.matrix().adjoint();
    let mut aux = AuxState::initial(&config.rx_antennas, &config.streams);
    let mut prev = 0.0;
    let mut records = Vec::new();
    let mut flops = Vec::new();
    let mut termination = Termination::MaxIters;
    for iteration in 1..=config.max_iters {
        let t0 = Instant::now();
        let y = channel.h() * ph.adjoint();
        let sig = Signal::new(&y, rx, &st);
        for k in 0..config.users() {
            aux.u[k] = sig.receiver(k, config.noise[k])?;
            aux.w[k] = sig.weight(k, &aux.u[k])?;
        }
        let surrogate = aux.weighted_logdet(&config.weights)?;
        let mut ws = SweepWorkspace::new(&aux, config, &y);
        sweep_antennas(&mut ws, channel, &mut ph, &config.antenna_budgets);
        let wall_s = t0.elapsed().as_secs_f64();
        flops.push(m * n * d + ws.flops);
        let p = Precoder::new(ph.adjoint(), &config.streams)?;
        let wsr = objective::wsr(channel, &p, config)?;
        records.push(IterationRecord { iteration, wsr, surrogate, wall_s });
        if (surrogate - prev).abs() <= config.epsilon {
            termination = Termination::ToleranceMet;
            break;
        }
        prev = surrogate;
    }
    let trace = SolveTrace { records, termination, total_wall_s: start.elapsed().as_secs_f64() };
    Ok(PapcSolution { precoder: Precoder::new(ph.adjoint(), &config.streams)?, aux, trace, flops })
}
