//! SNR × block length × bandwidth sweeps.

use rayon::prelude::*;
use std::io::Write;

use super::config::{ExperimentConfig, Scheme};
use super::sim::derive_seed;
use super::{achieved_bandwidth_ratio, retrain_at, simulate_once, HarnessError};
use crate::channel::ChannelSpec;
use crate::distortion::DistortionBreakdown;
use crate::ratecontrol::{evaluate_entry, fmt_float, select_model, LookupTable, Solution};
use crate::source::trainer::SurrogateTrainer;
use crate::source::{mse_to_db, SyntheticSource};

pub const SWEEP_HEADER: [&str; 17] = [
    "snr_db",
    "block_length",
    "bandwidth_target",
    "scheme",
    "model_id",
    "feasible",
    "R_s",
    "R_c",
    "rho",
    "D_s",
    "D_c",
    "D_hat_t",
    "simulated_mse",
    "empirical_per",
    "quality_db",
    "bandwidth_ratio",
    "iterations",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    pub snr_db: f64,
    pub block_length: usize,
    /// Configured d/M.
    pub bandwidth_target: f64,
    pub scheme: Scheme,
    pub model_id: u32,
    pub feasible: bool,
    pub r_s: f64,
    pub r_c: f64,
    pub rho: f64,
    pub d_s: f64,
    pub d_c: f64,
    pub d_hat_t: f64,
    /// NaN when not simulated.
    pub simulated_mse: f64,
    pub empirical_per: f64,
    /// 10 log₁₀(1 / D̂_t).
    pub quality_db: f64,
    /// Achieved T L / M.
    pub bandwidth_ratio: f64,
    /// Retraining iterations (alg2 only).
    pub iterations: usize,
}

impl SweepRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            fmt_float(self.snr_db),
            self.block_length.to_string(),
            fmt_float(self.bandwidth_target),
            self.scheme.as_str().to_string(),
            self.model_id.to_string(),
            self.feasible.to_string(),
            fmt_float(self.r_s),
            fmt_float(self.r_c),
            fmt_float(self.rho),
            fmt_float(self.d_s),
            fmt_float(self.d_c),
            fmt_float(self.d_hat_t),
            fmt_float(self.simulated_mse),
            fmt_float(self.empirical_per),
            fmt_float(self.quality_db),
            fmt_float(self.bandwidth_ratio),
            self.iterations.to_string(),
        ]
    }
}

/// One grid point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub block_length: usize,
    pub bandwidth_ratio: f64,
}

/// Points in bandwidth-ratio, block-length, SNR order.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut pts = Vec::new();
    for &bandwidth_ratio in &cfg.bandwidth_ratios() {
        for &block_length in &cfg.block_lengths() {
            for snr_db in cfg.sweep.snr_db.values() {
                pts.push(SweepPoint { snr_db, block_length, bandwidth_ratio });
            }
        }
    }
    pts
}

/// Capacity-achieving reference: the lowest-distortion table entry that fits
/// the capacity, delivered without channel distortion.
pub fn capacity_bound(table: &LookupTable, spec: &ChannelSpec, cfg: &ExperimentConfig) -> Solution {
    let cap = spec.capacity();
    let best = table.entries().iter().filter(|e| e.r_s / spec.d_tilde() <= cap).min_by(|a, b| a.d_s.total_cmp(&b.d_s));
    match best {
        Some(e) => Solution {
            entry: *e,
            rate: cap,
            breakdown: DistortionBreakdown {
                d_s: e.d_s,
                d_c: 0.0,
                d_hat_t: e.d_s,
                t_tilde: e.r_s / (spec.block_length as f64 * cap),
                rho: 0.0,
            },
            feasible: true,
            stage: crate::ratecontrol::Stage::LevelingOff,
        },
        None => evaluate_entry(&table.entries()[0], spec, &cfg.system()),
    }
}

struct RowCtx<'a> {
    cfg: &'a ExperimentConfig,
    source: &'a SyntheticSource,
    point: usize,
    p: SweepPoint,
    spec: ChannelSpec,
    seed: u64,
}

impl RowCtx<'_> {
    fn row(&self, scheme: Scheme, s: &Solution, simulate: bool, iterations: usize) -> Result<SweepRow, HarnessError> {
        let (simulated_mse, empirical_per) = if simulate && s.feasible {
            let r = simulate_once(self.cfg, self.source, s, &self.spec, derive_seed(self.seed, scheme as u64))?;
            (r.mse, r.per)
        } else {
            (f64::NAN, f64::NAN)
        };
        let b = &s.breakdown;
        Ok(SweepRow {
            point: self.point,
            snr_db: self.p.snr_db,
            block_length: self.p.block_length,
            bandwidth_target: self.p.bandwidth_ratio,
            scheme,
            model_id: s.entry.model_id,
            feasible: s.feasible,
            r_s: s.entry.r_s,
            r_c: s.rate,
            rho: b.rho,
            d_s: b.d_s,
            d_c: b.d_c,
            d_hat_t: b.d_hat_t,
            simulated_mse,
            empirical_per,
            quality_db: mse_to_db(b.d_hat_t),
            bandwidth_ratio: achieved_bandwidth_ratio(s.entry.r_s, self.p.block_length, s.rate, self.cfg.source.m),
            iterations,
        })
    }
}

fn point_rows(
    cfg: &ExperimentConfig,
    source: &SyntheticSource,
    table: &LookupTable,
    trainer: &SurrogateTrainer,
    point: usize,
    p: SweepPoint,
) -> Result<Vec<SweepRow>, HarnessError> {
    let spec = cfg.channel_spec_at(p.snr_db, p.block_length, p.bandwidth_ratio)?;
    let ctx = RowCtx { cfg, source, point, p, spec, seed: derive_seed(cfg.seed, point as u64) };
    let sim = cfg.sweep.simulate;
    let mut schemes = cfg.sweep.schemes.clone();
    schemes.sort();
    schemes.dedup();
    let mut rows = Vec::new();
    for scheme in schemes {
        let row = match scheme {
            Scheme::Alg1 => ctx.row(scheme, &select_model(table, &spec, &cfg.system()), sim, 0)?,
            Scheme::Alg2 => {
                let init = select_model(table, &spec, &cfg.system());
                if init.feasible {
                    let (_, out) = retrain_at(cfg, table, trainer, &spec)?;
                    ctx.row(scheme, &out.solution, sim, out.iterations())?
                } else {
                    ctx.row(scheme, &init, sim, 0)?
                }
            }
            Scheme::CapacityBound => {
                let mut r = ctx.row(scheme, &capacity_bound(table, &spec, cfg), false, 0)?;
                if r.feasible {
                    r.simulated_mse = r.d_s;
                    r.empirical_per = 0.0;
                }
                r
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Runs every sweep point in parallel; rows come back sorted by point then scheme
/// and are identical for a fixed config and seed.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    source: &SyntheticSource,
    table: &LookupTable,
    trainer: &SurrogateTrainer,
) -> Result<Vec<SweepRow>, HarnessError> {
    let pts = sweep_points(cfg);
    let mut rows: Vec<SweepRow> = pts
        .par_iter()
        .enumerate()
        .map(|(i, &p)| point_rows(cfg, source, table, trainer, i, p))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by_key(|r| (r.point, r.scheme));
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SWEEP_HEADER)?;
    for r in rows {
        wtr.write_record(r.record())?;
    }
    wtr.flush()?;
    Ok(())
}
