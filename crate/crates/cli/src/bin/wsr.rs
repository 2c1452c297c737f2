use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wsr_harness::{bench, check, run, ExperimentSpec, Level};

#[derive(Parser)]
#[command(name = "wsr", version, about = "Weighted sum-rate precoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every cell of an experiment file and write summary.csv, aggregate.csv and traces.
    Run { spec: PathBuf },
    /// Time the experiment's algorithms over its antenna counts (single worker).
    Bench { spec: PathBuf },
    /// Run the numerical self-check suites.
    Check {
        #[arg(long)]
        full: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Run { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let report = run::run(&spec, run::workers_from_env()?)?;
            for a in &report.aggregates {
                println!(
                    "{:<18} M={:<4} SNR={:<5} runs={:<3} failed={:<2} wsr={:.4}±{:.4} bpcu iters={:.1} wall={:.3e}s",
                    a.algorithm, a.antennas, a.snr_db, a.runs, a.failures, a.wsr_mean, a.wsr_stderr, a.iters_mean, a.wall_mean_s
                );
            }
            for f in &report.outcome.failures {
                eprintln!("failed: {} M={} SNR={} r={}: {}", f.algorithm, f.antennas, f.snr_db, f.realization, f.message);
            }
            println!("wrote {}", report.summary_csv.display());
            Ok(true)
        }
        Command::Bench { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let report = bench::bench(&spec)?;
            for r in &report.rows {
                println!(
                    "{:<18} M={:<4} iters={:<6.1} total med={:.3e}s iter med={:.3e}s gram med={:.3e}s",
                    r.algorithm, r.antennas, r.iters_mean, r.total_median_s, r.iter_median_s, r.gram_median_s
                );
            }
            for e in &report.exponents {
                match e.gram {
                    Some(g) => println!("{:<18} per-iteration exponent {:.3}, gram exponent {:.3}", e.algorithm, e.per_iteration, g),
                    None => println!("{:<18} per-iteration exponent {:.3}", e.algorithm, e.per_iteration),
                }
            }
            Ok(true)
        }
        Command::Check { full } => {
            let report = check(if full { Level::Full } else { Level::Fast });
            print!("{report}");
            Ok(report.passed())
        }
    }
}
