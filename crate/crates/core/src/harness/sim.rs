//! Monte Carlo transmission: encode, corrupt, decode, reconstruct.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{transmit, transmit_corrupted, ErrorMode};
use crate::codec::{decode_or_mean, dequantize, encode, quantize, CodecError, SourceCodecModel};
use crate::source::{Batch, LinearDecoder, SyntheticSource};

/// One channel condition to simulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSim {
    /// Packet error probability.
    pub rho: f64,
    pub packet_bits: usize,
    pub mode: ErrorMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOutcome {
    /// End-to-end distortion per output element.
    pub mse: f64,
    pub packets: u64,
    pub errored_packets: u64,
    /// Samples whose received stream differed from the sent one.
    pub corrupted_samples: usize,
    /// Conditioned corrupted decodes (one per sample) that fell back to the mean field.
    pub fallback_samples: usize,
}

impl SimOutcome {
    /// Empirical packet error rate.
    pub fn per(&self) -> f64 {
        if self.packets == 0 {
            0.0
        } else {
            self.errored_packets as f64 / self.packets as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSimulation {
    /// Distortion with an error-free channel.
    pub clean_mse: f64,
    /// Mean coded bits per sample, header included.
    pub rate_bits: f64,
    /// One outcome per requested [`ChannelSim`], in order.
    pub outcomes: Vec<SimOutcome>,
}

/// SplitMix64 mix of a master seed and an index, for per-task RNG streams.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct SampleResult {
    bits: usize,
    clean: f64,
    per_sim: Vec<(f64, usize, usize, bool, bool)>,
}

fn simulate_sample(
    model: &SourceCodecModel,
    y: &[f64],
    z: &[i64],
    x: &[f64],
    decoder: &LinearDecoder,
    sims: &[ChannelSim],
    seed: u64,
) -> Result<SampleResult, CodecError> {
    let stream = encode(y, z, model)?;
    let bytes = stream.to_bytes();
    let nbits = stream.total_bits();
    let clean = decoder.squared_error(x, &dequantize(&quantize(y, model.delta()), model.delta()));
    let per_sim = sims
        .iter()
        .enumerate()
        .map(|(s, sim)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
            let rep = transmit(&bytes, nbits, sim.packet_bits, sim.rho, sim.mode, &mut rng);
            let corrupted = rep.received != bytes;
            // the error is averaged analytically over the clean outcome and sampled
            // only on the corrupted one, which keeps rare errors from being missed
            let (err, fallback) = match transmit_corrupted(&bytes, nbits, sim.packet_bits, sim.rho, sim.mode, &mut rng)
            {
                Some((hit, any)) if hit.received != bytes => {
                    let (y_hat, ok) = decode_or_mean(&hit.received, model);
                    ((1.0 - any) * clean + any * decoder.squared_error(x, &y_hat), !ok)
                }
                _ => (clean, false),
            };
            (err, rep.packets(), rep.errored_packets(), corrupted, fallback)
        })
        .collect();
    Ok(SampleResult { bits: nbits, clean, per_sim })
}

/// Sends every sample of `batch` through each channel condition. Results are
/// deterministic in `seed` regardless of thread count.
pub fn simulate_batch(
    model: &SourceCodecModel,
    batch: &Batch,
    decoder: &LinearDecoder,
    sims: &[ChannelSim],
    seed: u64,
) -> Result<BatchSimulation, CodecError> {
    if batch.is_empty() {
        return Err(CodecError::EmptyBatch);
    }
    let results = (0..batch.len())
        .into_par_iter()
        .map(|n| {
            simulate_sample(model, &batch.y[n], &batch.z[n], &batch.x[n], decoder, sims, derive_seed(seed, n as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let norm = (batch.len() * decoder.m()) as f64;
    let mut outcomes = vec![SimOutcome::default(); sims.len()];
    for r in &results {
        for (o, &(err, p, e, corrupted, fallback)) in outcomes.iter_mut().zip(&r.per_sim) {
            o.mse += err;
            o.packets += p as u64;
            o.errored_packets += e as u64;
            o.corrupted_samples += corrupted as usize;
            o.fallback_samples += fallback as usize;
        }
    }
    for o in &mut outcomes {
        o.mse /= norm;
    }
    Ok(BatchSimulation {
        clean_mse: results.iter().map(|r| r.clean).sum::<f64>() / norm,
        rate_bits: results.iter().map(|r| r.bits as f64).sum::<f64>() / batch.len() as f64,
        outcomes,
    })
}

/// Samples drawn per chunk by [`simulate_source`].
pub const CHUNK: usize = 256;

/// As [`simulate_batch`] over `n` fresh samples from `source`, drawn in chunks so
/// memory stays bounded. Deterministic in `seed`.
pub fn simulate_source(
    model: &SourceCodecModel,
    source: &SyntheticSource,
    n: usize,
    sims: &[ChannelSim],
    seed: u64,
) -> Result<BatchSimulation, CodecError> {
    if n == 0 {
        return Err(CodecError::EmptyBatch);
    }
    let mut acc = BatchSimulation { clean_mse: 0.0, rate_bits: 0.0, outcomes: vec![SimOutcome::default(); sims.len()] };
    for (c, start) in (0..n).step_by(CHUNK).enumerate() {
        let len = CHUNK.min(n - start);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
        let batch = source.sample_batch(len, &mut rng);
        let part = simulate_batch(model, &batch, source.decoder(), sims, derive_seed(!seed, c as u64))?;
        let w = len as f64 / n as f64;
        acc.clean_mse += w * part.clean_mse;
        acc.rate_bits += w * part.rate_bits;
        for (a, o) in acc.outcomes.iter_mut().zip(&part.outcomes) {
            a.mse += w * o.mse;
            a.packets += o.packets;
            a.errored_packets += o.errored_packets;
            a.corrupted_samples += o.corrupted_samples;
            a.fallback_samples += o.fallback_samples;
        }
    }
    Ok(acc)
}
