//! Experiment configuration, read from JSON and overridable from the command
//! line.

use std::fs;
use std::path::{Path, PathBuf};

use nykpca::{Dataset, KernelSpec, SpectrumSpec};
use serde::{Deserialize, Serialize};

use crate::data::{filter_digit, load_csv, load_idx};
use crate::error::{HarnessError, Result};

/// Sub-seed slot reserved for synthetic data generation.
pub const DATA_SEED_SLOT: u64 = 0xDA7A;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        digit: Option<i64>,
    },
    Synthetic {
        spectrum: SpectrumSpec,
        n: usize,
        /// Defaults to a sub-seed of the master seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ekpca,
    Nystrom,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ekpca => "EKPCA",
            Method::Nystrom => "NYSTROM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SamplingConfig {
    PlainUniform,
    Als { s: f64, pilot_size: usize },
}

impl SamplingConfig {
    pub fn label(&self) -> &'static str {
        match self {
            SamplingConfig::PlainUniform => "plain_uniform",
            SamplingConfig::Als { .. } => "als",
        }
    }
}

/// Extra settings for the `bench` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub m: usize,
    #[serde(default = "default_true")]
    pub ekpca: bool,
}

fn default_true() -> bool {
    true
}

fn default_repetitions() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub kernel: KernelSpec,
    pub method: Method,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub m_list: Vec<usize>,
    pub ell_list: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output: PathBuf,
    /// When false every wall-time field is written as zero, which makes the
    /// results file a pure function of the configuration.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Adds EKPCA rows for the same data to a NYSTROM sweep.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
}

fn default_sampling() -> SamplingConfig {
    SamplingConfig::PlainUniform
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.repetitions < 1 {
            return Err(config_err("repetitions must be at least 1"));
        }
        if self.ell_list.is_empty() {
            return Err(config_err("ell_list must not be empty"));
        }
        if self.method == Method::Nystrom {
            let Some(&m_min) = self.m_list.iter().min() else {
                return Err(config_err("m_list must not be empty for NYSTROM runs"));
            };
            if m_min == 0 {
                return Err(config_err("landmark counts must be positive"));
            }
            if let Some(&bad) = self.ell_list.iter().find(|&&l| l > m_min) {
                return Err(config_err(format!("ell = {bad} exceeds the smallest m = {m_min}")));
            }
        }
        if let SamplingConfig::Als { s, pilot_size } = self.sampling {
            if !(s > 0.0) || !s.is_finite() || pilot_size == 0 {
                return Err(config_err("ALS sampling needs s > 0 and pilot_size >= 1"));
            }
        }
        if let DataSource::Synthetic { spectrum, n, .. } = &self.data {
            if *n == 0 {
                return Err(config_err("synthetic n must be positive"));
            }
            spectrum.decay.validate()?;
        }
        Ok(())
    }

    /// `ell_list` sorted and deduplicated.
    pub fn ells(&self) -> Vec<usize> {
        let mut v = self.ell_list.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// `m_list` sorted and deduplicated.
    pub fn ms(&self) -> Vec<usize> {
        let mut v = self.m_list.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Csv { path } => load_csv(path),
            DataSource::Idx { images, labels, digit } => {
                let all = load_idx(images, labels)?;
                match digit {
                    Some(d) => filter_digit(&all, *d),
                    None => Ok(all),
                }
            }
            DataSource::Synthetic { spectrum, n, seed } => {
                let seed = seed.unwrap_or_else(|| nykpca::rng::derive_seed(self.master_seed, DATA_SEED_SLOT));
                Ok(nykpca::analysis::generate_spectrum_dataset(spectrum, *n, seed)?)
            }
        }
    }
}

/// Command-line values that replace fields of a loaded configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<Method>,
    pub m_list: Option<Vec<usize>>,
    pub ell_list: Option<Vec<usize>>,
    pub repetitions: Option<usize>,
    pub no_timing: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(v) = &self.m_list {
            cfg.m_list = v.clone();
        }
        if let Some(v) = &self.ell_list {
            cfg.ell_list = v.clone();
        }
        if let Some(r) = self.repetitions {
            cfg.repetitions = r;
        }
        if self.no_timing {
            cfg.timing = false;
        }
    }
}
