//! Monte Carlo runner: every (M, SNR, realization, algorithm) cell is solved
//! once, written as a CSV row and, for iterative solvers, a JSON trace.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wsr_core::matrix_io::MatrixRecord;
use wsr_core::objective::{kkt_residual_spc, wsr_nats};
use wsr_core::{
    baselines, calibrate_noise, generate_channel, max_antenna_load, papc, rwmmse, sum_power, wmmse, ChannelSet,
    Precoder, SolveTrace, SystemConfig,
};

use crate::spec::{Algorithm, ExperimentSpec};

/// Environment variable holding the worker count for `run`.
pub const WORKERS_ENV: &str = "WSR_WORKERS";

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub algorithm: String,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "SNR")]
    pub snr_db: f64,
    pub realization: u64,
    pub wsr_bpcu: f64,
    pub iters: usize,
    pub wall_s: f64,
    /// Relative excess over the binding budget, `0` when feasible.
    pub feas_residual: f64,
    /// Empty for per-antenna algorithms.
    pub kkt_residual: Option<f64>,
}

impl RunRecord {
    /// Every column except the wall time.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord { wall_s: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub scenario: String,
    pub algorithm: String,
    #[serde(rename = "M")]
    pub antennas: usize,
    pub snr_db: f64,
    pub realization: u64,
    pub trace: SolveTrace,
    pub precoder: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub algorithm: String,
    pub antennas: usize,
    pub snr_db: f64,
    pub realization: u64,
    pub message: String,
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub algorithm: String,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "SNR")]
    pub snr_db: f64,
    pub runs: usize,
    pub failures: usize,
    pub wsr_mean: f64,
    pub wsr_stderr: f64,
    pub iters_mean: f64,
    pub wall_mean_s: f64,
    pub wall_median_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub traces: Vec<TraceFile>,
    pub failures: Vec<Failure>,
}

/// What one algorithm produced on one channel.
#[derive(Debug, Clone)]
pub struct Solved {
    pub precoder: Precoder,
    pub trace: Option<SolveTrace>,
    /// Seconds spent forming the Gram channel (R-WMMSE only).
    pub gram_s: f64,
}

/// Builds the algorithm's initial point and solves; ZF seeds every iterative solver.
pub fn solve_one(alg: Algorithm, channel: &ChannelSet, config: &SystemConfig) -> wsr_core::Result<Solved> {
    let plain = |precoder, trace| Solved { precoder, trace: Some(trace), gram_s: 0.0 };
    match alg {
        Algorithm::Wmmse => {
            let out = wmmse::solve(channel, config, &wmmse::zf_init(channel, config)?)?;
            Ok(plain(out.precoder, out.trace))
        }
        Algorithm::RWmmse { x_update } => {
            let out = rwmmse::solve(channel, config, &wmmse::zf_init(channel, config)?, x_update)?;
            Ok(Solved { precoder: out.precoder, trace: Some(out.trace), gram_s: out.gram_seconds })
        }
        Algorithm::PapcWmmse => {
            let init = baselines::normalize_papc(&wmmse::zf_init(channel, config)?, &config.antenna_budgets)?;
            let out = papc::solve(channel, config, &init)?;
            Ok(plain(out.precoder, out.trace))
        }
        Algorithm::NormalizedWmmse => {
            let out = wmmse::solve(channel, config, &wmmse::zf_init(channel, config)?)?;
            let p = baselines::normalize_papc(&out.precoder, &config.antenna_budgets)?;
            Ok(plain(p, out.trace))
        }
        Algorithm::Rzf { mu } => {
            let p = baselines::baseline(baselines::Baseline::Rzf, channel, config, mu)?;
            Ok(Solved { precoder: baselines::normalize_spc(&p, config.p_max)?, trace: None, gram_s: 0.0 })
        }
        other => {
            let kind = other.baseline().expect("remaining algorithms are baselines");
            let p = baselines::baseline(kind, channel, config, None)?;
            Ok(Solved { precoder: baselines::normalize_spc(&p, config.p_max)?, trace: None, gram_s: 0.0 })
        }
    }
}

fn feasibility_residual(alg: Algorithm, p: &Precoder, config: &SystemConfig) -> f64 {
    if alg.per_antenna() {
        (max_antenna_load(p, &config.antenna_budgets) - 1.0).max(0.0)
    } else {
        (sum_power(p) / config.p_max - 1.0).max(0.0)
    }
}

struct Cell<'a> {
    spec: &'a ExperimentSpec,
    antennas: usize,
    snr_db: f64,
    realization: u64,
}

fn run_cell(cell: &Cell<'_>, alg: Algorithm, channel: &ChannelSet, config: &SystemConfig) -> wsr_core::Result<(RunRecord, Option<TraceFile>)> {
    let t0 = Instant::now();
    let solved = solve_one(alg, channel, config)?;
    let wall_s = t0.elapsed().as_secs_f64();
    let kkt_residual = if alg.per_antenna() { None } else { Some(kkt_residual_spc(channel, &solved.precoder, config)?.residual) };
    let record = RunRecord {
        scenario: cell.spec.scenario.clone(),
        algorithm: alg.label().to_string(),
        antennas: cell.antennas,
        users: config.users(),
        snr_db: cell.snr_db,
        realization: cell.realization,
        wsr_bpcu: wsr_nats(channel, &solved.precoder, config)? / std::f64::consts::LN_2,
        iters: solved.trace.as_ref().map_or(0, SolveTrace::iterations),
        wall_s,
        feas_residual: feasibility_residual(alg, &solved.precoder, config),
        kkt_residual,
    };
    let trace = solved.trace.map(|trace| TraceFile {
        scenario: cell.spec.scenario.clone(),
        algorithm: record.algorithm.clone(),
        antennas: cell.antennas,
        snr_db: cell.snr_db,
        realization: cell.realization,
        trace,
        precoder: MatrixRecord::from_matrix(solved.precoder.matrix()),
    });
    Ok((record, trace))
}

/// Channel for realization `r` at `M = antennas`, shared by every SNR point.
pub fn realization_channel(spec: &ExperimentSpec, antennas: usize, realization: u64) -> wsr_core::Result<ChannelSet> {
    generate_channel(&spec.system.config(antennas), &spec.channel_spec(spec.snr_db[0]), realization)
}

/// The configuration at `M = antennas` with noise calibrated to `snr_db`.
pub fn calibrated_config(spec: &ExperimentSpec, channel: &ChannelSet, antennas: usize, snr_db: f64) -> wsr_core::Result<SystemConfig> {
    Ok(spec.system.config(antennas).with_noise(calibrate_noise(channel, snr_db)?))
}

fn run_realization(spec: &ExperimentSpec, antennas: usize, realization: u64) -> RunOutcome {
    let mut out = RunOutcome::default();
    let fail = |out: &mut RunOutcome, alg: &str, snr_db: f64, err: &dyn std::fmt::Display| {
        out.failures.push(Failure {
            algorithm: alg.to_string(),
            antennas,
            snr_db,
            realization,
            message: err.to_string(),
        })
    };
    let channel = match realization_channel(spec, antennas, realization) {
        Ok(ch) => ch,
        Err(e) => {
            for &snr in &spec.snr_db {
                for alg in &spec.algorithms {
                    fail(&mut out, alg.label(), snr, &e);
                }
            }
            return out;
        }
    };
    for &snr_db in &spec.snr_db {
        let config = match calibrated_config(spec, &channel, antennas, snr_db) {
            Ok(c) => c,
            Err(e) => {
                for alg in &spec.algorithms {
                    fail(&mut out, alg.label(), snr_db, &e);
                }
                continue;
            }
        };
        let cell = Cell { spec, antennas, snr_db, realization };
        for &alg in &spec.algorithms {
            match run_cell(&cell, alg, &channel, &config) {
                Ok((record, trace)) => {
                    out.records.push(record);
                    out.traces.extend(trace);
                }
                Err(e) => fail(&mut out, alg.label(), snr_db, &e),
            }
        }
    }
    out
}

fn algorithm_rank(spec: &ExperimentSpec, label: &str) -> usize {
    spec.algorithms.iter().position(|a| a.label() == label).unwrap_or(usize::MAX)
}

fn snr_rank(spec: &ExperimentSpec, snr: f64) -> usize {
    spec.snr_db.iter().position(|&s| s == snr).unwrap_or(usize::MAX)
}

/// Worker count from `WSR_WORKERS`; `None` leaves the pool at its default size.
pub fn workers_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v:?} is not a count"))?;
            anyhow::ensure!(n >= 1, "{WORKERS_ENV} must be at least 1");
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Solves every cell on a pool of `workers` threads. Output order is fixed
/// (M, SNR, realization, algorithm) regardless of scheduling.
pub fn execute(spec: &ExperimentSpec, workers: Option<usize>) -> anyhow::Result<RunOutcome> {
    spec.check()?;
    let jobs: Vec<(usize, u64)> = spec
        .system
        .antennas
        .iter()
        .flat_map(|&m| (0..spec.realizations as u64).map(move |r| (m, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    let parts: Vec<RunOutcome> = pool.install(|| jobs.par_iter().map(|&(m, r)| run_realization(spec, m, r)).collect());
    let mut out = RunOutcome::default();
    for part in parts {
        out.records.extend(part.records);
        out.traces.extend(part.traces);
        out.failures.extend(part.failures);
    }
    let key = |alg: &str, m: usize, snr: f64, r: u64| (m, snr_rank(spec, snr), r, algorithm_rank(spec, alg));
    out.records.sort_by_key(|x| key(&x.algorithm, x.antennas, x.snr_db, x.realization));
    out.traces.sort_by_key(|x| key(&x.algorithm, x.antennas, x.snr_db, x.realization));
    out.failures.sort_by_key(|x| key(&x.algorithm, x.antennas, x.snr_db, x.realization));
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn mean_and_median(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, median(&mut values.to_vec()))
}

/// Means and standard errors per (algorithm, M, SNR). Rows are summed in
/// realization order, so the result does not depend on the input order.
pub fn aggregate(records: &[RunRecord], failures: &[Failure]) -> Vec<AggregateRow> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.algorithm, a.antennas, a.realization)
            .cmp(&(&b.algorithm, b.antennas, b.realization))
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    let mut groups: Vec<Vec<&RunRecord>> = Vec::new();
    for r in sorted {
        match groups.iter_mut().find(|g| g[0].algorithm == r.algorithm && g[0].antennas == r.antennas && g[0].snr_db == r.snr_db) {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    groups.sort_by(|a, b| (&a[0].algorithm, a[0].antennas).cmp(&(&b[0].algorithm, b[0].antennas)).then(a[0].snr_db.total_cmp(&b[0].snr_db)));
    groups
        .into_iter()
        .map(|g| {
            let head = g[0];
            let n = g.len() as f64;
            let wsr: Vec<f64> = g.iter().map(|r| r.wsr_bpcu).collect();
            let mean = wsr.iter().sum::<f64>() / n;
            let var = if g.len() > 1 { wsr.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let walls: Vec<f64> = g.iter().map(|r| r.wall_s).collect();
            let (wall_mean_s, wall_median_s) = mean_and_median(&walls);
            AggregateRow {
                scenario: head.scenario.clone(),
                algorithm: head.algorithm.clone(),
                antennas: head.antennas,
                users: head.users,
                snr_db: head.snr_db,
                runs: g.len(),
                failures: failures
                    .iter()
                    .filter(|f| f.algorithm == head.algorithm && f.antennas == head.antennas && f.snr_db == head.snr_db)
                    .count(),
                wsr_mean: mean,
                wsr_stderr: (var / n).sqrt(),
                iters_mean: g.iter().map(|r| r.iters as f64).sum::<f64>() / n,
                wall_mean_s,
                wall_median_s,
            }
        })
        .collect()
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn trace_name(t: &TraceFile) -> String {
    format!("{}_M{}_snr{}_r{}.json", t.algorithm, t.antennas, t.snr_db, t.realization)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub aggregates: Vec<AggregateRow>,
    pub summary_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub trace_dir: PathBuf,
}

/// [`execute`] plus `summary.csv`, `aggregate.csv`, `failures.json` and
/// `traces/*.json` under the experiment's output directory.
pub fn run(spec: &ExperimentSpec, workers: Option<usize>) -> anyhow::Result<RunReport> {
    let outcome = execute(spec, workers)?;
    let aggregates = aggregate(&outcome.records, &outcome.failures);
    let dir = &spec.output_dir;
    let trace_dir = dir.join("traces");
    fs::create_dir_all(&trace_dir).with_context(|| format!("creating {}", trace_dir.display()))?;
    let summary_csv = dir.join("summary.csv");
    let aggregate_csv = dir.join("aggregate.csv");
    write_csv(&summary_csv, &outcome.records)?;
    write_csv(&aggregate_csv, &aggregates)?;
    fs::write(dir.join("failures.json"), serde_json::to_string_pretty(&outcome.failures)?)?;
    for t in &outcome.traces {
        fs::write(trace_dir.join(trace_name(t)), serde_json::to_string(t)?)?;
    }
    Ok(RunReport { outcome, aggregates, summary_csv, aggregate_csv, trace_dir })
}
