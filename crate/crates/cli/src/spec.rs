//! Experiment description, read from TOML.
//!
//! ```toml
//! scenario = "convergence"
//! snr_db = [10.0]
//! realizations = 20
//! output_dir = "out/convergence"
//! seed = 7
//! algorithms = [{ name = "wmmse" }, { name = "r-wmmse", x_update = "auto" }, { name = "zf" }]
//!
//! [system]
//! antennas = [64]
//! users = 12
//! rx_antennas = 4
//! streams = 2
//! p_max = 10.0
//! epsilon = 1e-6
//!
//! [channel]
//! distance_km = [0.1, 0.3]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};
use wsr_core::baselines::Baseline;
use wsr_core::rwmmse::XUpdate;
use wsr_core::{ChannelGenSpec, RateUnit, SystemConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub system: SystemTemplate,
    /// Its `seed` and `snr_db` are replaced by the top-level `seed` and each
    /// entry of `snr_db`.
    #[serde(default)]
    pub channel: ChannelGenSpec,
    pub algorithms: Vec<Algorithm>,
    pub snr_db: Vec<f64>,
    pub realizations: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("wsr-out")
}

/// Shape shared by every cell; `antennas` lists the `M` values swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemTemplate {
    pub antennas: Vec<usize>,
    pub users: usize,
    pub rx_antennas: usize,
    pub streams: usize,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    /// Equal weights when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_p_max() -> f64 {
    10.0
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    1000
}

impl SystemTemplate {
    /// Configuration at `M = antennas` with unit noise; budgets `P_max / M`.
    pub fn config(&self, antennas: usize) -> SystemConfig {
        let mut cfg = SystemConfig::uniform(antennas, self.users, self.rx_antennas, self.streams, self.p_max)
            .with_tolerance(self.epsilon, self.max_iters);
        if let Some(w) = &self.weights {
            cfg.weights = w.clone();
        }
        cfg.rate_unit = RateUnit::Bpcu;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Algorithm {
    Wmmse,
    RWmmse {
        #[serde(default)]
        x_update: XUpdate,
    },
    PapcWmmse,
    /// WMMSE under the sum-power budget, then scaled into the per-antenna budgets.
    NormalizedWmmse,
    Mrt,
    Zf,
    Rzf {
        #[serde(default)]
        mu: Option<f64>,
    },
    Ezf,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Wmmse => "wmmse",
            Algorithm::RWmmse { .. } => "r-wmmse",
            Algorithm::PapcWmmse => "papc-wmmse",
            Algorithm::NormalizedWmmse => "normalized-wmmse",
            Algorithm::Mrt => "mrt",
            Algorithm::Zf => "zf",
            Algorithm::Rzf { .. } => "rzf",
            Algorithm::Ezf => "ezf",
        }
    }

    /// Feasibility is judged against the per-antenna budgets.
    pub fn per_antenna(&self) -> bool {
        matches!(self, Algorithm::PapcWmmse | Algorithm::NormalizedWmmse)
    }

    pub fn iterative(&self) -> bool {
        matches!(self, Algorithm::Wmmse | Algorithm::RWmmse { .. } | Algorithm::PapcWmmse | Algorithm::NormalizedWmmse)
    }

    pub fn baseline(&self) -> Option<Baseline> {
        match self {
            Algorithm::Mrt => Some(Baseline::Mrt),
            Algorithm::Zf => Some(Baseline::Zf),
            Algorithm::Rzf { .. } => Some(Baseline::Rzf),
            Algorithm::Ezf => Some(Baseline::Ezf),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).context("parsing experiment spec")?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn check(&self) -> anyhow::Result<()> {
        ensure!(!self.scenario.trim().is_empty(), "scenario name is empty");
        ensure!(self.realizations >= 1, "realizations must be at least 1");
        ensure!(!self.algorithms.is_empty(), "no algorithms listed");
        ensure!(!self.snr_db.is_empty(), "no SNR points listed");
        ensure!(self.snr_db.iter().all(|s| s.is_finite()), "SNR points must be finite");
        ensure!(!self.system.antennas.is_empty(), "no antenna counts listed");
        for alg in &self.algorithms {
            if let Algorithm::Rzf { mu: Some(mu) } = alg {
                ensure!(*mu > 0.0 && mu.is_finite(), "rzf mu must be positive, got {mu}");
            }
        }
        self.channel.check()?;
        for &m in &self.system.antennas {
            let violations = self.system.config(m).violations();
            if !violations.is_empty() {
                bail!("system at M = {m}: {}", violations.join("; "));
            }
        }
        Ok(())
    }

    pub fn channel_spec(&self, snr_db: f64) -> ChannelGenSpec {
        ChannelGenSpec { seed: self.seed, snr_db, ..self.channel.clone() }
    }
}
