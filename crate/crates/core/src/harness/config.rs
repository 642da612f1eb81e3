//! Experiment configuration, read from TOML. Every field has a default.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::channel::{db_to_linear, fit_beta, read_bler_samples, ChannelSpec, CodeModel, ErrorMode};
use crate::ratecontrol::{RetrainConfig, SystemModel};
use crate::source::trainer::TrainerConfig;
use crate::source::SyntheticSourceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub block_length: usize,
    pub code: CodeModel,
    /// BLER samples to fit β₁, β₂ from; overrides `code` when set.
    pub bler_file: Option<PathBuf>,
    pub modulation_bits: u32,
    /// Channel uses per source element, d/M. Ignored when `budget` is set.
    pub bandwidth_ratio: f64,
    pub budget: Option<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            snr_db: 7.0,
            block_length: 512,
            code: CodeModel::Random,
            bler_file: None,
            modulation_bits: 1,
            bandwidth_ratio: 1.0,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Existing look-up table to load instead of building one.
    pub path: Option<PathBuf>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub count: usize,
    pub trainer: TrainerConfig,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self { path: None, lambda_min: 0.3, lambda_max: 3e4, count: 16, trainer: TrainerConfig::default() }
    }
}

/// Inclusive range `start, start + step, …, ≤ stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return Vec::new();
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Alg1,
    Alg2,
    CapacityBound,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Alg1 => "alg1",
            Scheme::Alg2 => "alg2",
            Scheme::CapacityBound => "capacity_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Range,
    /// Defaults to the channel's block length when empty.
    pub block_lengths: Vec<usize>,
    /// Defaults to the channel's bandwidth ratio when empty.
    pub bandwidth_ratios: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Run the Monte Carlo simulation for every alg1/alg2 row.
    pub simulate: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: Range { start: 0.0, stop: 14.0, step: 1.0 },
            block_lengths: Vec::new(),
            bandwidth_ratios: Vec::new(),
            schemes: vec![Scheme::Alg1, Scheme::Alg2, Scheme::CapacityBound],
            simulate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub samples: usize,
    pub mode: ErrorMode,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { samples: 64, mode: ErrorMode::Packet }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Stage threshold on `distortion_scale · D_c`.
    pub eta1: f64,
    pub distortion_scale: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { eta1: 1.0, distortion_scale: 255.0 * 255.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub source: SyntheticSourceSpec,
    pub channel: ChannelConfig,
    pub system: SystemConfig,
    pub table: TableConfig,
    pub retrain: RetrainConfig,
    pub sweep: SweepConfig,
    pub simulation: SimulationConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.source.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.table.trainer.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.retrain.validate().map_err(HarnessError::Config)?;
        if !self.channel.snr_db.is_finite() {
            return bad(format!("snr_db = {}", self.channel.snr_db));
        }
        if !(self.table.lambda_min > 0.0 && self.table.lambda_max >= self.table.lambda_min) || self.table.count == 0 {
            return bad("table needs 0 < lambda_min ≤ lambda_max and count > 0".into());
        }
        if self.sweep.snr_db.values().is_empty() {
            return bad("sweep SNR range is empty".into());
        }
        if self.sweep.schemes.is_empty() {
            return bad("sweep has no schemes".into());
        }
        if self.sweep.bandwidth_ratios.iter().any(|&r| !(r > 0.0)) {
            return bad("bandwidth ratios must be positive".into());
        }
        if self.simulation.samples == 0 {
            return bad("simulation.samples must be positive".into());
        }
        if !(self.system.eta1 > 0.0 && self.system.distortion_scale > 0.0) {
            return bad("system eta1 and distortion_scale must be positive".into());
        }
        // Catches bad channel parameters at load time.
        self.channel_spec_at(self.channel.snr_db, self.channel.block_length, self.channel.bandwidth_ratio)?;
        for &l in &self.block_lengths() {
            for &r in &self.bandwidth_ratios() {
                self.channel_spec_at(self.channel.snr_db, l, r)?;
            }
        }
        Ok(())
    }

    pub fn system(&self) -> SystemModel {
        SystemModel {
            k: self.source.k,
            m: self.source.m,
            eta1: self.system.eta1,
            distortion_scale: self.system.distortion_scale,
        }
    }

    /// The code model, with β fitted from the BLER file when one is given.
    pub fn code(&self) -> Result<CodeModel, HarnessError> {
        match &self.channel.bler_file {
            None => Ok(self.channel.code),
            Some(p) => {
                let f = std::fs::File::open(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                let samples = read_bler_samples(f).map_err(|e| HarnessError::Config(e.to_string()))?;
                let (beta1, beta2) = fit_beta(&samples).map_err(|e| HarnessError::Config(e.to_string()))?;
                Ok(CodeModel::Fitted { beta1, beta2 })
            }
        }
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec, HarnessError> {
        self.channel_spec_at(self.channel.snr_db, self.channel.block_length, self.channel.bandwidth_ratio)
    }

    /// Channel spec with SNR, block length and bandwidth ratio replaced.
    pub fn channel_spec_at(&self, snr_db: f64, block_length: usize, ratio: f64) -> Result<ChannelSpec, HarnessError> {
        let budget = match (self.channel.budget, ratio == self.channel.bandwidth_ratio) {
            (Some(b), true) => b,
            _ => ratio * self.source.m as f64,
        };
        let spec = ChannelSpec {
            snr: db_to_linear(snr_db),
            block_length,
            code: self.code()?,
            budget,
            modulation_bits: self.channel.modulation_bits,
        };
        spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn block_lengths(&self) -> Vec<usize> {
        if self.sweep.block_lengths.is_empty() {
            vec![self.channel.block_length]
        } else {
            self.sweep.block_lengths.clone()
        }
    }

    pub fn bandwidth_ratios(&self) -> Vec<f64> {
        if self.sweep.bandwidth_ratios.is_empty() {
            vec![self.channel.bandwidth_ratio]
        } else {
            self.sweep.bandwidth_ratios.clone()
        }
    }
}
