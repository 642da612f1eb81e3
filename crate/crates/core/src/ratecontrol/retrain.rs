//! Bisection retraining around the model picked by joint selection.

use serde::{Deserialize, Serialize};

use super::{evaluate_entry, LookupTable, ModelEntry, Solution, Stage, SystemModel};
use crate::channel::ChannelSpec;
use crate::distortion::channel_distortion;

/// Ids handed to retrained models are offset by this from the iteration index.
pub const RETRAINED_ID_BASE: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    /// Stage threshold on the scaled channel distortion.
    pub eta1: f64,
    /// Stopping tolerance on successive λ̂, relative to the selected model's λ.
    pub xi: f64,
    /// Weight of the predicted channel distortion in the retraining loss.
    pub beta: f64,
    pub max_iters: usize,
    /// Subtracted from the rate before normalizing by M in the loss.
    pub rate_offset: f64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self { eta1: 1.0, xi: 1e-2, beta: 1e-4, max_iters: 64, rate_offset: 0.0 }
    }
}

impl RetrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eta1 > 0.0) {
            return Err(format!("eta1 = {} must be positive", self.eta1));
        }
        if !(self.xi > 0.0) {
            return Err(format!("xi = {} must be positive", self.xi));
        }
        if !(self.beta > 0.0) {
            return Err(format!("beta = {} must be positive", self.beta));
        }
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        Ok(())
    }
}

/// Channel term added to the training loss: β · scale · D̂_c(R_s) at the rule-chosen channel rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPenalty {
    pub spec: ChannelSpec,
    pub sys: SystemModel,
    pub c_tilde: f64,
    pub beta: f64,
}

impl ChannelPenalty {
    /// Predicted channel distortion of a model with rate `r_s` (raw MSE units).
    pub fn channel_distortion(&self, r_s: f64) -> f64 {
        let choice = super::optimal_channel_rate(r_s, self.spec.d_tilde(), self.spec.snr, self.spec.code);
        let rho = self.spec.block_error(choice.rate);
        let t = r_s / (self.spec.block_length as f64 * choice.rate);
        channel_distortion(self.sys.k, self.sys.m, rho, t, self.c_tilde, r_s)
    }

    /// Loss contribution β · scale · D̂_c.
    pub fn loss(&self, r_s: f64) -> f64 {
        self.beta * self.sys.distortion_scale * self.channel_distortion(r_s)
    }
}

/// Maps λ to a model; with a penalty, the channel term joins the loss and
/// the returned C̃ is the penalty's.
pub trait Trainer {
    type Error: std::error::Error + Send + Sync + 'static;
    fn train(&mut self, lambda: f64, penalty: Option<&ChannelPenalty>) -> Result<ModelEntry, Self::Error>;
}

#[derive(Debug, thiserror::Error)]
pub enum RetrainError<E: std::error::Error + 'static> {
    #[error("trainer failed at iteration {iteration}: {source}")]
    Trainer {
        iteration: usize,
        #[source]
        source: E,
    },
    #[error("selected model {0} is not in the look-up table")]
    UnknownModel(u32),
    #[error("invalid retrain config: {0}")]
    Config(String),
}

/// One trained iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainStep {
    pub lambda: f64,
    pub solution: Solution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainOutcome {
    /// Best iterate seen, or the initial solution if nothing beat it.
    pub solution: Solution,
    pub steps: Vec<RetrainStep>,
    /// Initial bisection bracket.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Absolute λ tolerance used.
    pub xi: f64,
}

impl RetrainOutcome {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// ⌈log₂((λ̄_max − λ̄_min)/ξ)⌉ + 1.
    pub fn iteration_bound(&self) -> usize {
        let ratio = (self.lambda_max - self.lambda_min) / self.xi;
        if ratio <= 1.0 {
            1
        } else {
            ratio.log2().ceil() as usize + 1
        }
    }
}

/// Bisection on λ between the selected model and its table neighbour.
/// Leveling-off iterates raise the lower bracket, cliff iterates lower the upper one;
/// stops once successive λ̂ differ by less than ξ.
pub fn retrain<T: Trainer>(
    init: &Solution,
    table: &LookupTable,
    trainer: &mut T,
    cfg: &RetrainConfig,
    spec: &ChannelSpec,
    sys: &SystemModel,
) -> Result<RetrainOutcome, RetrainError<T::Error>> {
    cfg.validate().map_err(RetrainError::Config)?;
    let sys = SystemModel { eta1: cfg.eta1, ..*sys };
    let idx = table.position(init.entry.model_id).ok_or(RetrainError::UnknownModel(init.entry.model_id))?;
    let lambda_star = init.entry.lambda;
    let entries = table.entries();
    let stage = sys.stage(init.breakdown.d_c);
    let neighbour = match stage {
        Stage::LevelingOff => entries.get(idx + 1).map_or(2.0 * lambda_star, |e| e.lambda),
        Stage::Cliff => {
            if idx == 0 {
                lambda_star / 2.0
            } else {
                entries[idx - 1].lambda
            }
        }
    };
    let (mut lo, mut hi) = if neighbour > lambda_star { (lambda_star, neighbour) } else { (neighbour, lambda_star) };
    let (lambda_min, lambda_max) = (lo, hi);
    let xi = cfg.xi * lambda_star;
    let penalty = ChannelPenalty { spec: *spec, sys, c_tilde: init.entry.c_tilde, beta: cfg.beta };

    let mut best = *init;
    let mut steps = Vec::new();
    let mut lambda = 0.5 * (lambda_star + neighbour);
    for iteration in 0..cfg.max_iters {
        let mut entry =
            trainer.train(lambda, Some(&penalty)).map_err(|source| RetrainError::Trainer { iteration, source })?;
        entry.c_tilde = init.entry.c_tilde;
        entry.model_id = RETRAINED_ID_BASE + iteration as u32;
        let sol = evaluate_entry(&entry, spec, &sys);
        steps.push(RetrainStep { lambda, solution: sol });
        if sol.feasible && sol.breakdown.d_hat_t < best.breakdown.d_hat_t {
            best = sol;
        }
        let next = match sol.stage {
            Stage::LevelingOff if sol.feasible => {
                lo = lambda;
                0.5 * (lambda + hi)
            }
            _ => {
                hi = lambda;
                0.5 * (lambda + lo)
            }
        };
        if (next - lambda).abs() < xi {
            break;
        }
        lambda = next;
    }
    Ok(RetrainOutcome { solution: best, steps, lambda_min, lambda_max, xi })
}
