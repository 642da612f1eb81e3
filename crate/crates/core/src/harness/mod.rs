//! Experiment orchestration behind the CLI: table building, selection,
//! retraining, Monte Carlo transmission and sweeps.

pub mod config;
pub mod plot;
pub mod sim;
pub mod sweep;

use std::io::Write;
use std::path::Path;

use crate::channel::{fit_beta, packet_bits, packet_count, read_bler_samples, ChannelError, ChannelSpec};
use crate::codec::CodecError;
use crate::ratecontrol::{
    fmt_float, retrain, select_model, ChannelPenalty, LookupTable, ModelEntry, RateControlError, RetrainError,
    RetrainOutcome, Solution, Stage, Trainer,
};
use crate::source::trainer::{geometric_lambdas, SurrogateTrainer, TrainerError};
use crate::source::{mse_to_db, SourceError, SyntheticSource};
pub use config::{ExperimentConfig, Scheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sim::{derive_seed, simulate_batch, ChannelSim};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    RateControl(#[from] RateControlError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Retrain(#[from] RetrainError<TrainerError>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
}

impl HarnessError {
    /// Config errors map to exit code 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

impl Trainer for &SurrogateTrainer<'_> {
    type Error = TrainerError;
    fn train(&mut self, lambda: f64, penalty: Option<&ChannelPenalty>) -> Result<ModelEntry, TrainerError> {
        self.train_entry(lambda, penalty)
    }
}

pub fn build_source(cfg: &ExperimentConfig) -> Result<SyntheticSource, HarnessError> {
    Ok(SyntheticSource::new(cfg.source.clone())?)
}

pub fn build_trainer<'a>(
    cfg: &ExperimentConfig,
    source: &'a SyntheticSource,
) -> Result<SurrogateTrainer<'a>, HarnessError> {
    Ok(SurrogateTrainer::new(source, cfg.table.trainer.clone())?)
}

/// Trains the configured λ grid into a look-up table.
pub fn build_table(cfg: &ExperimentConfig, trainer: &SurrogateTrainer) -> Result<LookupTable, HarnessError> {
    let lambdas = geometric_lambdas(cfg.table.lambda_min, cfg.table.lambda_max, cfg.table.count);
    Ok(trainer.build_table(&lambdas)?)
}

/// Loads the table named in the config if the file exists, otherwise builds it.
pub fn load_or_build_table(cfg: &ExperimentConfig, trainer: &SurrogateTrainer) -> Result<LookupTable, HarnessError> {
    match &cfg.table.path {
        Some(p) if p.exists() => read_table(p),
        _ => build_table(cfg, trainer),
    }
}

pub fn read_table(path: &Path) -> Result<LookupTable, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    Ok(LookupTable::read_csv(f)?)
}

/// Model selection at the configured channel.
pub fn select(cfg: &ExperimentConfig, table: &LookupTable, spec: &ChannelSpec) -> Solution {
    select_model(table, spec, &cfg.system())
}

/// Retraining starting from the selected model.
pub fn retrain_at(
    cfg: &ExperimentConfig,
    table: &LookupTable,
    trainer: &SurrogateTrainer,
    spec: &ChannelSpec,
) -> Result<(Solution, RetrainOutcome), HarnessError> {
    let sys = cfg.system();
    let init = select_model(table, spec, &sys);
    let out = retrain(&init, table, &mut &*trainer, &cfg.retrain, spec, &sys)?;
    Ok((init, out))
}

/// Monte Carlo result for one solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimReport {
    pub mse: f64,
    pub clean_mse: f64,
    pub per: f64,
    pub packets: u64,
}

/// Encodes a fresh batch with the solution's model, packetizes it at R_c*,
/// transmits with ρ(R_c*), decodes and reconstructs.
pub fn simulate_once(
    cfg: &ExperimentConfig,
    source: &SyntheticSource,
    solution: &Solution,
    spec: &ChannelSpec,
    seed: u64,
) -> Result<SimReport, HarnessError> {
    simulate_with_rho(cfg, source, solution, spec, solution.breakdown.rho, seed)
}

/// As [`simulate_once`] with the packet error probability overridden.
pub fn simulate_with_rho(
    cfg: &ExperimentConfig,
    source: &SyntheticSource,
    solution: &Solution,
    spec: &ChannelSpec,
    rho: f64,
    seed: u64,
) -> Result<SimReport, HarnessError> {
    let model = source.codec_model(solution.entry.delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let batch = source.sample_batch(cfg.simulation.samples, &mut rng);
    let sim = ChannelSim { rho, packet_bits: packet_bits(spec.block_length, solution.rate), mode: cfg.simulation.mode };
    let out = simulate_batch(&model, &batch, source.decoder(), &[sim], seed)?;
    let o = out.outcomes[0];
    Ok(SimReport { mse: o.mse, clean_mse: out.clean_mse, per: o.per(), packets: o.packets })
}

/// Fits (β₁, β₂) to a BLER CSV file.
pub fn fitbeta_file(path: &Path) -> Result<(f64, f64), HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    Ok(fit_beta(&read_bler_samples(f)?)?)
}

pub const SOLUTION_HEADER: [&str; 15] = [
    "scheme",
    "snr_db",
    "block_length",
    "model_id",
    "lambda",
    "feasible",
    "stage",
    "R_s",
    "R_c",
    "rho",
    "D_s",
    "D_c",
    "D_hat_t",
    "quality_db",
    "bandwidth_ratio",
];

/// One CSV record describing a solution.
pub fn solution_record(scheme: &str, snr_db: f64, spec: &ChannelSpec, m: usize, s: &Solution) -> Vec<String> {
    let b = &s.breakdown;
    vec![
        scheme.to_string(),
        fmt_float(snr_db),
        spec.block_length.to_string(),
        s.entry.model_id.to_string(),
        fmt_float(s.entry.lambda),
        s.feasible.to_string(),
        match s.stage {
            Stage::Cliff => "cliff",
            Stage::LevelingOff => "leveling_off",
        }
        .to_string(),
        fmt_float(s.entry.r_s),
        fmt_float(s.rate),
        fmt_float(b.rho),
        fmt_float(b.d_s),
        fmt_float(b.d_c),
        fmt_float(b.d_hat_t),
        fmt_float(mse_to_db(b.d_hat_t)),
        fmt_float(achieved_bandwidth_ratio(s.entry.r_s, spec.block_length, s.rate, m)),
    ]
}

/// T L / M for a stream of `r_s` bits at channel rate `rate`.
pub fn achieved_bandwidth_ratio(r_s: f64, l: usize, rate: f64, m: usize) -> f64 {
    packet_count(r_s.ceil() as u64, l, rate).map_or(f64::NAN, |t| crate::channel::bandwidth_ratio(t, l, m))
}

pub fn write_solutions<W: Write>(w: W, rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SOLUTION_HEADER)?;
    for r in rows {
        wtr.write_record(r)?;
    }
    wtr.flush()?;
    Ok(())
}
