//! Surrogate trainer: picks the quantization step minimizing λ·D_s + rate for a
//! given λ, standing in for retraining the learned codec.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{Batch, SourceError, SyntheticSource};
use crate::channel::{packet_error_from_bits, ErrorMode};
use crate::codec::{measure_rate_distortion, HEADER_BITS};
use crate::density::discretized_gaussian_entropy;
use crate::distortion::{estimate_c_tilde, CalibrationModel, CalibrationPoint, DistortionError};
use crate::harness::sim::{simulate_source, ChannelSim};
use crate::ratecontrol::{ChannelPenalty, LookupTable, ModelEntry, RateControlError, Trainer};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("C̃ calibration failed: {0}")]
    Calibration(#[from] DistortionError),
    #[error(transparent)]
    Table(#[from] RateControlError),
}

/// Bit-flip sweep used to calibrate C̃ for each trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub rho_b: Vec<f64>,
    pub samples: usize,
    /// Bits per packet used to express ρ_b as a packet error probability.
    pub packet_bits: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { rho_b: vec![1e-6, 1e-5, 1e-4, 1e-3], samples: 1024, packet_bits: 256, seed: 0xCA1B }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub delta_min: f64,
    pub delta_max: f64,
    pub grid_points: usize,
    /// Relative width at which the golden-section refinement stops.
    pub rel_tol: f64,
    /// Subtracted from the rate before normalizing by M.
    pub rate_offset: f64,
    pub validation_samples: usize,
    pub validation_seed: u64,
    pub calibration: CalibrationConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            delta_min: 1e-3,
            delta_max: 20.0,
            grid_points: 48,
            rel_tol: 1e-3,
            rate_offset: 0.0,
            validation_samples: 32,
            validation_seed: 0x5EED,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::Config(m.into()));
        if !(self.delta_min > 0.0 && self.delta_max > self.delta_min) {
            return bad("need 0 < delta_min < delta_max");
        }
        if self.grid_points < 3 {
            return bad("grid_points must be at least 3");
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 0.5) {
            return bad("rel_tol must be in (0, 0.5)");
        }
        if self.validation_samples == 0 || self.calibration.samples == 0 {
            return bad("sample counts must be positive");
        }
        if self.calibration.packet_bits == 0 {
            return bad("calibration packet_bits must be positive");
        }
        Ok(())
    }
}

/// Trains models for one source on a fixed validation batch.
pub struct SurrogateTrainer<'a> {
    source: &'a SyntheticSource,
    batch: Batch,
    cfg: TrainerConfig,
    /// (block mean, level σ, expected elements per sample) for every populated pair.
    groups: Vec<(f64, f64, f64)>,
    side_bits: f64,
}

impl<'a> SurrogateTrainer<'a> {
    pub fn new(source: &'a SyntheticSource, cfg: TrainerConfig) -> Result<Self, TrainerError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.validation_seed);
        let batch = source.sample_batch(cfg.validation_samples, &mut rng);
        Self::with_batch(source, batch, cfg)
    }

    pub fn with_batch(source: &'a SyntheticSource, batch: Batch, cfg: TrainerConfig) -> Result<Self, TrainerError> {
        cfg.validate()?;
        if batch.is_empty() {
            return Err(TrainerError::Config("empty validation batch".into()));
        }
        let spec = source.spec();
        let n = batch.len() as f64;
        let bs = spec.block_size() as f64;
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for z in &batch.z {
            for (j, &l) in z.iter().enumerate() {
                *counts.entry((j, l as usize)).or_default() += 1;
            }
        }
        let groups = counts
            .into_iter()
            .map(|((j, l), c)| (source.block_means()[j], spec.levels[l], c as f64 / n * bs))
            .collect();
        let model = source.codec_model(1.0)?;
        let side_bits = batch.z.iter().map(|z| model.hyper_prior().information(z)).sum::<f64>() / n;
        Ok(Self { source, batch, cfg, groups, side_bits })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn source(&self) -> &SyntheticSource {
        self.source
    }

    /// Measured distortion per output element of quantizing the batch with step `delta`.
    pub fn distortion(&self, delta: f64) -> f64 {
        let dec = self.source.decoder();
        let total: f64 = self
            .batch
            .y
            .par_iter()
            .map(|y| {
                let e: Vec<f64> = y.iter().map(|&v| v - (v / delta).round() * delta).collect();
                dec.error_energy(&e)
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total / (self.batch.len() * dec.m()) as f64
    }

    /// Expected bits per sample: conditional feature entropy, side information and header.
    pub fn rate_estimate(&self, delta: f64) -> f64 {
        let features: f64 = self
            .groups
            .iter()
            .map(|&(u, s, w)| w * discretized_gaussian_entropy(u, s, delta).expect("validated parameters"))
            .sum();
        features + self.side_bits + HEADER_BITS as f64
    }

    /// λ·D_s + (R − offset)/M, plus the channel penalty when given.
    pub fn objective(&self, lambda: f64, delta: f64, penalty: Option<&ChannelPenalty>) -> f64 {
        let m = self.source.decoder().m() as f64;
        let r = self.rate_estimate(delta);
        let mut f = lambda * self.distortion(delta) + (r - self.cfg.rate_offset) / m;
        if let Some(p) = penalty {
            f += p.loss(r);
        }
        f
    }

    /// Geometric grid over [delta_min, delta_max] then golden-section search in ln Δ.
    pub fn optimize_delta(&self, lambda: f64, penalty: Option<&ChannelPenalty>) -> f64 {
        let (a, b) = (self.cfg.delta_min.ln(), self.cfg.delta_max.ln());
        let n = self.cfg.grid_points;
        let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|&x| self.objective(lambda, x.exp(), penalty)).collect();
        let mut i_best = 0;
        for i in 1..n {
            if fs[i] < fs[i_best] {
                i_best = i;
            }
        }
        let mut best = (fs[i_best], xs[i_best]);
        let mut lo = xs[i_best.saturating_sub(1)];
        let mut hi = xs[(i_best + 1).min(n - 1)];
        let f = |x: f64| self.objective(lambda, x.exp(), penalty);
        let mut x1 = hi - GOLDEN * (hi - lo);
        let mut x2 = lo + GOLDEN * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        let tol = self.cfg.rel_tol.ln_1p();
        while hi - lo > tol {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - GOLDEN * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + GOLDEN * (hi - lo);
                f2 = f(x2);
            }
            for (fv, xv) in [(f1, x1), (f2, x2)] {
                if fv < best.0 {
                    best = (fv, xv);
                }
            }
        }
        best.1.exp()
    }

    /// Fits C̃ from a bit-flip sweep at step `delta`.
    pub fn calibrate(&self, delta: f64, r_s: f64) -> Result<f64, TrainerError> {
        let c = &self.cfg.calibration;
        let model = self.source.codec_model(delta)?;
        let sims: Vec<ChannelSim> = c
            .rho_b
            .iter()
            .map(|&rb| ChannelSim {
                rho: packet_error_from_bits(rb, c.packet_bits),
                packet_bits: c.packet_bits,
                mode: ErrorMode::Bit,
            })
            .collect();
        let out = simulate_source(&model, self.source, c.samples, &sims, c.seed).map_err(SourceError::from)?;
        let obs: Vec<CalibrationPoint> =
            c.rho_b.iter().zip(&out.outcomes).map(|(&rho_b, o)| CalibrationPoint { rho_b, mse: o.mse }).collect();
        let spec = self.source.spec();
        let cm = CalibrationModel { k: spec.k, m: spec.m, d_s: out.clean_mse, r_s, packet_bits: c.packet_bits };
        Ok(estimate_c_tilde(&obs, &cm)?)
    }

    /// Trains at `lambda` and measures the coded rate and distortion of the result.
    pub fn train_entry(&self, lambda: f64, penalty: Option<&ChannelPenalty>) -> Result<ModelEntry, TrainerError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TrainerError::Config(format!("lambda = {lambda}")));
        }
        let delta = self.optimize_delta(lambda, penalty);
        let model = self.source.codec_model(delta)?;
        let rd = measure_rate_distortion(&model, &self.batch, self.source.decoder()).map_err(SourceError::from)?;
        let c_tilde = match penalty {
            Some(p) => p.c_tilde,
            None => self.calibrate(delta, rd.rate_bits)?,
        };
        Ok(ModelEntry { lambda, delta, r_s: rd.rate_bits, d_s: rd.distortion, c_tilde, model_id: 0 })
    }

    /// Step whose estimated rate equals `bits` per sample, by bisection in ln Δ.
    pub fn delta_for_rate(&self, bits: f64) -> f64 {
        let (mut lo, mut hi) = (self.cfg.delta_min.ln(), self.cfg.delta_max.ln());
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            // rate falls as Δ grows
            if self.rate_estimate(mid.exp()) > bits {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    /// Model whose estimated rate is `bits`, with measured (R_s, D_s) and C̃ left at zero.
    pub fn train_for_rate(&self, bits: f64) -> Result<ModelEntry, TrainerError> {
        let delta = self.delta_for_rate(bits);
        let model = self.source.codec_model(delta)?;
        let rd = measure_rate_distortion(&model, &self.batch, self.source.decoder()).map_err(SourceError::from)?;
        Ok(ModelEntry { lambda: f64::NAN, delta, r_s: rd.rate_bits, d_s: rd.distortion, c_tilde: 0.0, model_id: 0 })
    }

    /// Trains every λ and assembles a look-up table; entries that would break the
    /// rate/distortion ordering are dropped.
    pub fn build_table(&self, lambdas: &[f64]) -> Result<LookupTable, TrainerError> {
        let mut ls = lambdas.to_vec();
        ls.sort_by(f64::total_cmp);
        ls.dedup();
        let trained = ls.par_iter().map(|&l| self.train_entry(l, None)).collect::<Result<Vec<_>, _>>()?;
        let mut kept: Vec<ModelEntry> = Vec::new();
        for e in trained {
            if kept.last().is_none_or(|p| e.r_s > p.r_s && e.d_s < p.d_s) {
                kept.push(e);
            }
        }
        for (i, e) in kept.iter_mut().enumerate() {
            e.model_id = i as u32;
        }
        Ok(LookupTable::new(kept)?)
    }
}

impl Trainer for SurrogateTrainer<'_> {
    type Error = TrainerError;
    fn train(&mut self, lambda: f64, penalty: Option<&ChannelPenalty>) -> Result<ModelEntry, TrainerError> {
        self.train_entry(lambda, penalty)
    }
}

/// Trains one model for `lambda` on `validation` with the default trainer settings.
pub fn surrogate_train(lambda: f64, source: &SyntheticSource, validation: Batch) -> Result<ModelEntry, TrainerError> {
    SurrogateTrainer::with_batch(source, validation, TrainerConfig::default())?.train_entry(lambda, None)
}

/// λ values spaced geometrically over [lo, hi].
pub fn geometric_lambdas(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}
