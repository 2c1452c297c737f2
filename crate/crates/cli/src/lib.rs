//! Experiment harness for the `wsr-core` solvers: Monte Carlo runs with CSV
//! and JSON output, single-threaded timing sweeps, and numerical self-checks.

pub mod bench;
pub mod check;
pub mod run;
pub mod spec;

pub use check::{check, check_with, CheckReport, Kernels, Level};
pub use spec::{Algorithm, ExperimentSpec, SystemTemplate};
