//! Channel-rate rule, joint model selection over the look-up table, stage
//! classification, bisection retraining and the finite-blocklength scaling check.

pub mod retrain;

use serde::{Deserialize, Serialize};
use std::f64::consts::LOG2_E;
use std::io::{Read, Write};

use crate::channel::{capacity, ChannelSpec, CodeModel};
use crate::distortion::DistortionBreakdown;

pub use retrain::{retrain, ChannelPenalty, RetrainConfig, RetrainError, RetrainOutcome, Trainer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RateControlError {
    #[error("look-up table is empty")]
    EmptyTable,
    #[error("look-up table entry {index} breaks ordering: {reason}")]
    Unordered { index: usize, reason: &'static str },
    #[error("look-up table entry {index} is invalid: {reason}")]
    InvalidEntry { index: usize, reason: &'static str },
    #[error("look-up table csv: {0}")]
    Csv(String),
    #[error("need at least 3 gap samples, got {0}")]
    TooFewSamples(usize),
    #[error("gap sample {0} is not usable")]
    BadSample(usize),
}

/// One codec configuration of the look-up table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub lambda: f64,
    pub delta: f64,
    #[serde(rename = "source_rate_bits")]
    pub r_s: f64,
    #[serde(rename = "source_distortion_mse")]
    pub d_s: f64,
    pub c_tilde: f64,
    pub model_id: u32,
}

/// Entries sorted by λ, with rate rising and distortion falling along λ.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    entries: Vec<ModelEntry>,
}

impl LookupTable {
    pub fn new(mut entries: Vec<ModelEntry>) -> Result<Self, RateControlError> {
        if entries.is_empty() {
            return Err(RateControlError::EmptyTable);
        }
        entries.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        for (index, e) in entries.iter().enumerate() {
            let bad = |reason| Err(RateControlError::InvalidEntry { index, reason });
            if !(e.r_s > 0.0 && e.r_s.is_finite()) {
                return bad("source rate must be positive");
            }
            if !(e.d_s >= 0.0 && e.d_s.is_finite()) {
                return bad("source distortion must be nonnegative");
            }
            if !(e.c_tilde > 0.0 && e.c_tilde.is_finite()) {
                return bad("c_tilde must be positive");
            }
            if !(e.delta > 0.0 && e.lambda > 0.0) {
                return bad("lambda and delta must be positive");
            }
        }
        for (index, w) in entries.windows(2).enumerate() {
            let bad = |reason| Err(RateControlError::Unordered { index: index + 1, reason });
            if w[1].lambda <= w[0].lambda {
                return bad("lambda not strictly increasing");
            }
            if w[1].r_s <= w[0].r_s {
                return bad("source rate not strictly increasing");
            }
            if w[1].d_s >= w[0].d_s {
                return bad("source distortion not strictly decreasing");
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, model_id: u32) -> Option<usize> {
        self.entries.iter().position(|e| e.model_id == model_id)
    }

    /// Writes `lambda,delta,source_rate_bits,source_distortion_mse,c_tilde,model_id`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), RateControlError> {
        let err = |e: csv::Error| RateControlError::Csv(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lambda", "delta", "source_rate_bits", "source_distortion_mse", "c_tilde", "model_id"])
            .map_err(err)?;
        for e in &self.entries {
            wr.write_record([
                fmt_float(e.lambda),
                fmt_float(e.delta),
                fmt_float(e.r_s),
                fmt_float(e.d_s),
                fmt_float(e.c_tilde),
                e.model_id.to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| RateControlError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, RateControlError> {
        let mut rd = csv::Reader::from_reader(r);
        let entries = rd
            .deserialize::<ModelEntry>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RateControlError::Csv(e.to_string()))?;
        Self::new(entries)
    }
}

/// Nine significant digits, the precision of every CSV float.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Leveling-off (channel distortion below threshold) or cliff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LevelingOff,
    Cliff,
}

/// D_c ≥ η₁ is a cliff, including the boundary.
pub fn classify_stage(d_c: f64, eta1: f64) -> Stage {
    if d_c >= eta1 {
        Stage::Cliff
    } else {
        Stage::LevelingOff
    }
}

/// Dimensions and the stage threshold shared by the selection routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemModel {
    pub k: usize,
    pub m: usize,
    /// Stage threshold, compared against `distortion_scale · D_c`.
    pub eta1: f64,
    pub distortion_scale: f64,
}

impl SystemModel {
    pub fn new(k: usize, m: usize) -> Self {
        Self { k, m, eta1: 1.0, distortion_scale: 255.0 * 255.0 }
    }

    pub fn stage(&self, d_c: f64) -> Stage {
        classify_stage(d_c * self.distortion_scale, self.eta1)
    }
}

/// Channel rate chosen by the rate rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRate {
    pub rate: f64,
    /// R_s / d̃ ≤ log₂(1 + γ).
    pub feasible: bool,
}

/// R_c* = R_s/d̃ for random coding and max(R_s/d̃, 1/β₁) for a fitted code.
pub fn optimal_channel_rate(r_s: f64, d_tilde: f64, snr: f64, code: CodeModel) -> ChannelRate {
    let floor = r_s / d_tilde;
    let rate = match code {
        CodeModel::Random => floor,
        CodeModel::Fitted { beta1, .. } => floor.max(1.0 / beta1),
    };
    ChannelRate { rate, feasible: floor <= capacity(snr) }
}

/// Exhaustive minimizer of (R_s/(L R)) ρ(R) over R = R_s/d̃ + i·step up to capacity,
/// evaluated in the log domain; ties keep the smaller rate. `None` when infeasible.
pub fn grid_oracle_rate(r_s: f64, d_tilde: f64, snr: f64, l: usize, code: CodeModel, step: f64) -> Option<f64> {
    let lo = r_s / d_tilde;
    let cap = capacity(snr);
    if lo > cap || !(step > 0.0) {
        return None;
    }
    let spec = ChannelSpec { snr, block_length: l, code, budget: f64::INFINITY, modulation_bits: 1 };
    let mut best = (f64::INFINITY, lo);
    let mut i = 0u64;
    loop {
        let r = lo + i as f64 * step;
        if r > cap {
            break;
        }
        let v = (r_s / (l as f64 * r)).ln() + spec.ln_block_error(r);
        if v < best.0 {
            best = (v, r);
        }
        i += 1;
    }
    Some(best.1)
}

/// Output of model selection or retraining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution {
    pub entry: ModelEntry,
    pub rate: f64,
    pub breakdown: DistortionBreakdown,
    pub feasible: bool,
    pub stage: Stage,
}

/// Scores `entry` on `spec`: rate rule, block error, expected packets and D̂_t.
pub fn evaluate_entry(entry: &ModelEntry, spec: &ChannelSpec, sys: &SystemModel) -> Solution {
    let choice = optimal_channel_rate(entry.r_s, spec.d_tilde(), spec.snr, spec.code);
    let rho = spec.block_error(choice.rate);
    let t_tilde = entry.r_s / (spec.block_length as f64 * choice.rate);
    let breakdown = DistortionBreakdown::new(sys.k, sys.m, entry.d_s, entry.r_s, rho, t_tilde, entry.c_tilde);
    Solution { entry: *entry, rate: choice.rate, breakdown, feasible: choice.feasible, stage: sys.stage(breakdown.d_c) }
}

/// Exhaustive search over feasible entries for the smallest D̂_t (first entry wins ties).
/// With no feasible entry, returns the lowest-rate entry marked infeasible.
pub fn select_model(table: &LookupTable, spec: &ChannelSpec, sys: &SystemModel) -> Solution {
    let mut best: Option<Solution> = None;
    for e in table.entries() {
        let s = evaluate_entry(e, spec, sys);
        if !s.feasible {
            continue;
        }
        if best.is_none_or(|b| s.breakdown.d_hat_t < b.breakdown.d_hat_t) {
            best = Some(s);
        }
    }
    best.unwrap_or_else(|| evaluate_entry(&table.entries()[0], spec, sys))
}

/// Slope of the regression of ln D_c on g² and how it compares with −L / (2 log₂²e).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub expected: f64,
    /// Slope within 10% of the expected exponent.
    pub conforming: bool,
}

pub fn expected_scaling_slope(l: usize) -> f64 {
    -(l as f64) / (2.0 * LOG2_E * LOG2_E)
}

pub fn scaling_exponent(l: usize, samples: &[(f64, f64)]) -> Result<ScalingFit, RateControlError> {
    if samples.len() < 3 {
        return Err(RateControlError::TooFewSamples(samples.len()));
    }
    for (i, &(g, d)) in samples.iter().enumerate() {
        if !(g > 0.0 && d > 0.0 && d.is_finite()) {
            return Err(RateControlError::BadSample(i));
        }
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0 * s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(RateControlError::BadSample(0));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let expected = expected_scaling_slope(l);
    Ok(ScalingFit { slope, expected, conforming: (slope / expected - 1.0).abs() <= 0.1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::db_to_linear;

    pub(crate) fn toy_table() -> LookupTable {
        let entries = (0..6)
            .map(|i| ModelEntry {
                lambda: 2f64.powi(i),
                delta: 1.0 / (i + 1) as f64,
                r_s: 2000.0 * (i + 1) as f64,
                d_s: 0.1 / (i + 1) as f64,
                c_tilde: 2.0,
                model_id: i as u32,
            })
            .collect();
        LookupTable::new(entries).unwrap()
    }

    #[test]
    fn rate_rule_examples() {
        let r = optimal_channel_rate(10_000.0, 20_000.0, 3.0, CodeModel::Random);
        assert_eq!(r, ChannelRate { rate: 0.5, feasible: true });
        let fitted = CodeModel::Fitted { beta1: 8.0, beta2: -10.0 };
        assert_eq!(optimal_channel_rate(100.0, 1000.0, 3.0, fitted).rate, 0.125);
        assert_eq!(optimal_channel_rate(200.0, 1000.0, 3.0, fitted).rate, 0.2);
        assert!(!optimal_channel_rate(5000.0, 1000.0, 3.0, CodeModel::Random).feasible);
    }

    #[test]
    fn grid_oracle_examples() {
        let fitted = CodeModel::Fitted { beta1: 8.0, beta2: -10.0 };
        let r = grid_oracle_rate(50.0, 1000.0, 3.0, 512, fitted, 1e-4).unwrap();
        assert!((r - 0.125).abs() <= 1e-4);
        assert_eq!(grid_oracle_rate(5000.0, 1000.0, 3.0, 512, CodeModel::Random, 1e-4), None);
        let r = grid_oracle_rate(700.0, 1000.0, 3.0, 512, CodeModel::Random, 1e-4).unwrap();
        assert_eq!(r, 0.7);
    }

    #[test]
    fn stage_boundaries() {
        assert_eq!(classify_stage(0.0, 1.0), Stage::LevelingOff);
        assert_eq!(classify_stage(10.0, 1.0), Stage::Cliff);
        assert_eq!(classify_stage(1.0, 1.0), Stage::Cliff);
    }

    #[test]
    fn table_validation_and_csv() {
        let t = toy_table();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lambda,delta,source_rate_bits,source_distortion_mse,c_tilde,model_id\n"));
        assert!(text.contains("1.00000000e0,1.00000000e0,2.00000000e3"));
        let back = LookupTable::read_csv(buf.as_slice()).unwrap();
        for (a, b) in back.entries().iter().zip(t.entries()) {
            assert_eq!(a.model_id, b.model_id);
            for (x, y) in [(a.lambda, b.lambda), (a.delta, b.delta), (a.r_s, b.r_s), (a.d_s, b.d_s)] {
                assert!((x - y).abs() <= 5e-9 * y.abs());
            }
        }
        let mut bad = t.entries().to_vec();
        bad[2].d_s = 1.0;
        assert!(matches!(LookupTable::new(bad), Err(RateControlError::Unordered { .. })));
        assert_eq!(LookupTable::new(vec![]), Err(RateControlError::EmptyTable));
    }

    #[test]
    fn high_snr_picks_richest_entry() {
        let t = toy_table();
        let sys = SystemModel::new(4096, 4096);
        let spec = ChannelSpec::new(db_to_linear(40.0), 512, CodeModel::Random, 4096.0).unwrap();
        let s = select_model(&t, &spec, &sys);
        assert!(s.feasible);
        assert_eq!(s.entry.model_id, 5);
        assert_eq!(s.stage, Stage::LevelingOff);
    }

    #[test]
    fn low_snr_is_infeasible() {
        let t = toy_table();
        let sys = SystemModel::new(4096, 4096);
        let spec = ChannelSpec::new(db_to_linear(-10.0), 512, CodeModel::Random, 4096.0).unwrap();
        let s = select_model(&t, &spec, &sys);
        assert!(!s.feasible);
        assert_eq!(s.entry.model_id, 0);
    }

    #[test]
    fn scaling_exponent_examples() {
        assert!((expected_scaling_slope(512) + 122.99597156305956).abs() < 1e-9);
        let flat = [(0.2, 1.0), (0.1, 1.0), (0.05, 1.0)];
        let f = scaling_exponent(512, &flat).unwrap();
        assert!(f.slope.abs() < 1e-12 && !f.conforming);
        assert!(scaling_exponent(512, &flat[..2]).is_err());
        let exact: Vec<_> =
            [0.2, 0.15, 0.1, 0.05].iter().map(|&g: &f64| (g, (expected_scaling_slope(1024) * g * g).exp())).collect();
        assert!(scaling_exponent(1024, &exact).unwrap().conforming);
    }
}
