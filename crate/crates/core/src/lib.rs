//! Weighted sum-rate precoding for multi-user MIMO downlinks.
//!
//! Solvers: classic WMMSE under a sum-power constraint, the reduced
//! WMMSE that works on the `N×N` Gram channel, and a per-antenna
//! power-constrained variant. Closed-form baselines and channel generation
//! live alongside.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod linalg;
pub mod matrix_io;
pub mod objective;
pub mod papc;
pub mod rwmmse;
pub mod types;
pub mod verify;
pub mod wmmse;

pub use channel::{calibrate_noise, generate_channel, ChannelGenSpec};
pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use types::{
    max_antenna_load, per_antenna_power, sum_power, validate, AuxState, ChannelSet, GramContext, IterationRecord,
    Precoder, RateUnit, ReducedPrecoder, SolveTrace, SystemConfig, Termination, ValidationReport,
};
