//! Single-threaded timing sweep over the antenna counts of a spec.

use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use wsr_core::verify::loglog_slope;

use crate::run::{calibrated_config, mean_and_median, realization_channel, solve_one, write_csv};
use crate::spec::{Algorithm, ExperimentSpec};

/// Stopping tolerance used for every benchmark solve (nats).
pub const BENCH_EPSILON: f64 = 1e-4;
/// Untimed solves before each cell.
pub const WARMUP_RUNS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    #[serde(rename = "M")]
    pub antennas: usize,
    pub samples: usize,
    pub iters_mean: f64,
    /// Gram formation plus all iterations, per solve.
    pub total_mean_s: f64,
    pub total_median_s: f64,
    pub iter_mean_s: f64,
    pub iter_median_s: f64,
    pub gram_mean_s: f64,
    pub gram_median_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub algorithm: String,
    /// Log-log slope of median per-iteration time against `M`.
    pub per_iteration: f64,
    /// Same for Gram formation; only set for R-WMMSE.
    pub gram: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub exponents: Vec<Exponent>,
    pub csv: Option<PathBuf>,
}

impl BenchReport {
    pub fn row(&self, algorithm: &str, antennas: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.antennas == antennas)
    }

    pub fn exponent(&self, algorithm: &str) -> Option<&Exponent> {
        self.exponents.iter().find(|e| e.algorithm == algorithm)
    }
}

struct Sample {
    iters: usize,
    total_s: f64,
    iter_s: f64,
    gram_s: f64,
}

fn time_once(alg: Algorithm, channel: &wsr_core::ChannelSet, config: &wsr_core::SystemConfig) -> anyhow::Result<Sample> {
    let solved = solve_one(alg, channel, config).with_context(|| format!("{alg} at M = {}", config.antennas))?;
    let (iters, work) = match &solved.trace {
        Some(t) => (t.iterations(), t.records.iter().map(|r| r.wall_s).sum::<f64>()),
        None => (0, 0.0),
    };
    Ok(Sample {
        iters,
        total_s: solved.gram_s + work,
        iter_s: if iters > 0 { work / iters as f64 } else { 0.0 },
        gram_s: solved.gram_s,
    })
}

/// Times each (algorithm, M) cell over `realizations` channels at the first
/// SNR point, after [`WARMUP_RUNS`] untimed solves. Iterative solvers stop at
/// [`BENCH_EPSILON`].
pub fn measure(spec: &ExperimentSpec) -> anyhow::Result<BenchReport> {
    spec.check()?;
    let snr = spec.snr_db[0];
    let mut rows = Vec::new();
    for &m in &spec.system.antennas {
        let channels = (0..spec.realizations as u64)
            .map(|r| {
                let ch = realization_channel(spec, m, r)?;
                let mut cfg = calibrated_config(spec, &ch, m, snr)?;
                cfg.epsilon = BENCH_EPSILON;
                Ok((ch, cfg))
            })
            .collect::<wsr_core::Result<Vec<_>>>()?;
        for &alg in &spec.algorithms {
            for _ in 0..WARMUP_RUNS {
                time_once(alg, &channels[0].0, &channels[0].1)?;
            }
            let samples = channels.iter().map(|(ch, cfg)| time_once(alg, ch, cfg)).collect::<anyhow::Result<Vec<_>>>()?;
            let pick = |f: fn(&Sample) -> f64| mean_and_median(&samples.iter().map(f).collect::<Vec<_>>());
            let (total_mean_s, total_median_s) = pick(|s| s.total_s);
            let (iter_mean_s, iter_median_s) = pick(|s| s.iter_s);
            let (gram_mean_s, gram_median_s) = pick(|s| s.gram_s);
            rows.push(BenchRow {
                algorithm: alg.label().to_string(),
                antennas: m,
                samples: samples.len(),
                iters_mean: samples.iter().map(|s| s.iters as f64).sum::<f64>() / samples.len() as f64,
                total_mean_s,
                total_median_s,
                iter_mean_s,
                iter_median_s,
                gram_mean_s,
                gram_median_s,
            });
        }
    }
    let exponents = fit_exponents(spec, &rows);
    Ok(BenchReport { rows, exponents, csv: None })
}

fn fit_exponents(spec: &ExperimentSpec, rows: &[BenchRow]) -> Vec<Exponent> {
    if spec.system.antennas.len() < 2 {
        return Vec::new();
    }
    spec.algorithms
        .iter()
        .filter(|a| a.iterative())
        .map(|alg| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.algorithm == alg.label()).collect();
            let slope = |f: fn(&BenchRow) -> f64| {
                loglog_slope(&mine.iter().map(|r| ((r.antennas as f64).ln(), f(r).ln())).collect::<Vec<_>>())
            };
            Exponent {
                algorithm: alg.label().to_string(),
                per_iteration: slope(|r| r.iter_median_s),
                gram: matches!(alg, Algorithm::RWmmse { .. }).then(|| slope(|r| r.gram_median_s)),
            }
        })
        .collect()
}

/// [`measure`] plus `bench.csv` and `exponents.json` under the output directory.
pub fn bench(spec: &ExperimentSpec) -> anyhow::Result<BenchReport> {
    let mut report = measure(spec)?;
    std::fs::create_dir_all(&spec.output_dir).with_context(|| format!("creating {}", spec.output_dir.display()))?;
    let csv = spec.output_dir.join("bench.csv");
    write_csv(&csv, &report.rows)?;
    std::fs::write(spec.output_dir.join("exponents.json"), serde_json::to_string_pretty(&report.exponents)?)?;
    report.csv = Some(csv);
    Ok(report)
}
