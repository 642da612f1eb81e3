//! Finite-blocklength block-error models, BLER fitting, packetization, channel
//! inversion and packet-error injection.

use libm::erfc;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, LOG2_E, PI};

/// Shortest block length accepted for the random-coding model.
pub const MIN_RANDOM_BLOCK: usize = 128;
/// Transmit power ceiling for channel inversion.
pub const DEFAULT_MAX_POWER: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid channel parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("need at least 2 BLER samples, got {0}")]
    TooFewSamples(usize),
    #[error("BLER sample {index} is unusable (rate {rate}, bler {bler})")]
    BadSample { index: usize, rate: f64, bler: f64 },
    #[error("fitted slope {0} is not positive")]
    NonIncreasing(f64),
    #[error("channel rate must be positive")]
    ZeroRate,
    #[error("reading BLER samples: {0}")]
    Csv(String),
}

/// Block-error model of the channel code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CodeModel {
    /// Normal approximation of random coding with ML decoding.
    Random,
    /// ρ = min(1, exp(β₁ R_c + β₂)) fitted to a practical code.
    Fitted { beta1: f64, beta2: f64 },
}

/// One link: SNR γ (linear), block length L, code family, channel-use budget d
/// and bits per modulation symbol b (reporting only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    pub snr: f64,
    pub block_length: usize,
    pub code: CodeModel,
    pub budget: f64,
    pub modulation_bits: u32,
}

impl ChannelSpec {
    pub fn new(snr: f64, block_length: usize, code: CodeModel, budget: f64) -> Result<Self, ChannelError> {
        let s = Self { snr, block_length, code, budget, modulation_bits: 1 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |name, value| Err(ChannelError::InvalidParameter { name, value });
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad("snr", self.snr);
        }
        if self.block_length == 0 {
            return bad("block_length", 0.0);
        }
        if matches!(self.code, CodeModel::Random) && self.block_length < MIN_RANDOM_BLOCK {
            return bad("block_length", self.block_length as f64);
        }
        if let CodeModel::Fitted { beta1, beta2 } = self.code {
            if !(beta1 > 0.0 && beta1.is_finite()) {
                return bad("beta1", beta1);
            }
            if !beta2.is_finite() {
                return bad("beta2", beta2);
            }
        }
        if !(self.budget > self.block_length as f64) {
            return bad("budget", self.budget);
        }
        if self.modulation_bits == 0 {
            return bad("modulation_bits", 0.0);
        }
        Ok(())
    }

    /// d̃ = d − L, the budget after the ceiling relaxation.
    pub fn d_tilde(&self) -> f64 {
        self.budget - self.block_length as f64
    }

    /// log₂(1 + γ).
    pub fn capacity(&self) -> f64 {
        capacity(self.snr)
    }

    pub fn block_error(&self, rate: f64) -> f64 {
        match self.code {
            CodeModel::Random => block_error_random(rate, self.snr, self.block_length),
            CodeModel::Fitted { beta1, beta2 } => block_error_fitted(rate, beta1, beta2),
        }
    }

    /// ln ρ, accurate where ρ itself underflows.
    pub fn ln_block_error(&self, rate: f64) -> f64 {
        match self.code {
            CodeModel::Random => ln_block_error_random(rate, self.snr, self.block_length),
            CodeModel::Fitted { beta1, beta2 } => (beta1 * rate + beta2).min(0.0),
        }
    }

    /// Information bits per coded binary symbol, R_c / b.
    pub fn binary_code_rate(&self, rate: f64) -> f64 {
        rate / self.modulation_bits as f64
    }
}

pub fn capacity(snr: f64) -> f64 {
    snr.ln_1p() * LOG2_E
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Gaussian tail Q(x).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// ln Q(x), switching to the asymptotic series once Q nears underflow.
pub fn ln_q_function(x: f64) -> f64 {
    if x < 30.0 {
        let q = q_function(x);
        if x < -5.0 {
            return (-q_function(-x)).ln_1p();
        }
        return q.ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (x * (2.0 * PI).sqrt()).ln() + series.ln()
}

fn random_coding_argument(rate: f64, snr: f64, l: usize) -> f64 {
    let dispersion = (1.0 - (1.0 + snr).powi(-2)) * LOG2_E * LOG2_E;
    (l as f64).sqrt() * (capacity(snr) - rate) / dispersion.sqrt()
}

/// ρ = Q(√L (log₂(1+γ) − R_c) / √V) with V = (1 − (1+γ)⁻²) log₂²e.
pub fn block_error_random(rate: f64, snr: f64, l: usize) -> f64 {
    q_function(random_coding_argument(rate, snr, l)).max(f64::MIN_POSITIVE)
}

pub fn ln_block_error_random(rate: f64, snr: f64, l: usize) -> f64 {
    ln_q_function(random_coding_argument(rate, snr, l))
}

/// ρ = min(1, exp(β₁ R_c + β₂)).
pub fn block_error_fitted(rate: f64, beta1: f64, beta2: f64) -> f64 {
    (beta1 * rate + beta2).exp().min(1.0)
}

/// Least-squares line through (R_c, ln ρ̂); returns (β₁, β₂).
pub fn fit_beta(samples: &[(f64, f64)]) -> Result<(f64, f64), ChannelError> {
    if samples.len() < 2 {
        return Err(ChannelError::TooFewSamples(samples.len()));
    }
    for (index, &(rate, bler)) in samples.iter().enumerate() {
        if !(rate.is_finite() && bler > 0.0 && bler < 1.0) {
            return Err(ChannelError::BadSample { index, rate, bler });
        }
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1.ln()).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1.ln() - my)).sum();
    if sxx <= 0.0 {
        return Err(ChannelError::NonIncreasing(0.0));
    }
    let beta1 = sxy / sxx;
    if !(beta1 > 0.0) {
        return Err(ChannelError::NonIncreasing(beta1));
    }
    Ok((beta1, my - beta1 * mx))
}

/// Reads `rate_bits_per_symbol,bler` rows.
pub fn read_bler_samples<R: std::io::Read>(reader: R) -> Result<Vec<(f64, f64)>, ChannelError> {
    #[derive(Deserialize)]
    struct Row {
        rate_bits_per_symbol: f64,
        bler: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize::<Row>()
        .map(|r| r.map(|r| (r.rate_bits_per_symbol, r.bler)).map_err(|e| ChannelError::Csv(e.to_string())))
        .collect()
}

/// T = ⌈B / (L R_c)⌉.
pub fn packet_count(bits: u64, l: usize, rate: f64) -> Result<u64, ChannelError> {
    if !(rate > 0.0) {
        return Err(ChannelError::ZeroRate);
    }
    if l == 0 {
        return Err(ChannelError::InvalidParameter { name: "block_length", value: 0.0 });
    }
    if bits == 0 {
        return Ok(0);
    }
    let per = l as f64 * rate;
    let t = (bits as f64 / per).ceil();
    // guard against the quotient landing a hair above an integer
    let t = if (t - 1.0) * per >= bits as f64 { t - 1.0 } else { t };
    Ok(t as u64)
}

/// Payload bits carried per packet, N = ⌈L R_c⌉.
pub fn packet_bits(l: usize, rate: f64) -> usize {
    ((l as f64 * rate).ceil() as usize).max(1)
}

/// T L / M.
pub fn bandwidth_ratio(packets: u64, l: usize, m: usize) -> f64 {
    packets as f64 * l as f64 / m as f64
}

/// Channel inversion outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerControl {
    pub power: f64,
    pub outage: bool,
}

/// p = 1/‖h‖², capped at `max_power` with the outage flag set when the cap binds.
pub fn inversion_power(h: Complex64, max_power: f64) -> PowerControl {
    let g = h.norm_sqr();
    if g > 0.0 && 1.0 / g <= max_power {
        PowerControl { power: 1.0 / g, outage: false }
    } else {
        PowerControl { power: max_power, outage: true }
    }
}

/// Received SNR after inversion, or `None` in outage.
pub fn inverted_snr(h: Complex64, snr: f64, max_power: f64) -> Option<f64> {
    let pc = inversion_power(h, max_power);
    (!pc.outage).then(|| snr * pc.power * h.norm_sqr())
}

/// How packet errors corrupt the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Errored packets carry i.i.d. uniform bits.
    #[default]
    Packet,
    /// Each bit flips independently with ρ_b = 1 − (1 − ρ)^(1/N).
    Bit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionReport {
    pub received: Vec<u8>,
    /// One entry per packet, true when the packet was hit.
    pub error_mask: Vec<bool>,
}

impl TransmissionReport {
    pub fn packets(&self) -> usize {
        self.error_mask.len()
    }

    pub fn errored_packets(&self) -> usize {
        self.error_mask.iter().filter(|&&e| e).count()
    }

    pub fn any_error(&self) -> bool {
        self.error_mask.iter().any(|&e| e)
    }
}

/// Per-bit flip probability equivalent to packet error `rho` over `n` bits.
pub fn bit_flip_probability(rho: f64, n: usize) -> f64 {
    if rho >= 1.0 {
        return 1.0;
    }
    -((-rho).ln_1p() / n as f64).exp_m1()
}

/// Packet error probability equivalent to bit flips with `rho_b` over `n` bits.
pub fn packet_error_from_bits(rho_b: f64, n: usize) -> f64 {
    if rho_b >= 1.0 {
        return 1.0;
    }
    -(n as f64 * (-rho_b).ln_1p()).exp_m1()
}

/// Sends the first `nbits` bits of `bytes` as packets of `n` bits each and
/// corrupts them per `mode`.
pub fn transmit(
    bytes: &[u8],
    nbits: usize,
    n: usize,
    rho: f64,
    mode: ErrorMode,
    rng: &mut impl Rng,
) -> TransmissionReport {
    assert!(n > 0, "packet size must be positive");
    let nbits = nbits.min(bytes.len() * 8);
    let rho = rho.clamp(0.0, 1.0);
    let packets = nbits.div_ceil(n);
    let mut received = bytes.to_vec();
    let mut mask = vec![false; packets];
    let flip = |buf: &mut [u8], i: usize| buf[i / 8] ^= 0x80 >> (i % 8);
    match mode {
        ErrorMode::Packet => {
            for (t, hit) in mask.iter_mut().enumerate() {
                if rho > 0.0 && rng.random::<f64>() < rho {
                    *hit = true;
                    for i in t * n..((t + 1) * n).min(nbits) {
                        if rng.random::<bool>() {
                            flip(&mut received, i);
                        }
                    }
                }
            }
        }
        ErrorMode::Bit => {
            let rho_b = bit_flip_probability(rho, n);
            if rho_b >= 1.0 {
                for i in 0..nbits {
                    flip(&mut received, i);
                }
                mask.fill(true);
            } else if rho_b > 0.0 {
                let gaps = Geometric::new(rho_b).expect("probability in (0, 1)");
                let mut i = gaps.sample(rng);
                while i < nbits as u64 {
                    let pos = i as usize;
                    flip(&mut received, pos);
                    mask[pos / n] = true;
                    i = i.saturating_add(1).saturating_add(gaps.sample(rng));
                }
            }
        }
    }
    TransmissionReport { received, error_mask: mask }
}

/// Index of the first success among `n` Bernoulli(`p`) trials, given at least one.
fn first_hit(p: f64, n: usize, rng: &mut impl Rng) -> usize {
    if p >= 1.0 {
        return 0;
    }
    let any = -(n as f64 * (-p).ln_1p()).exp_m1();
    let u: f64 = rng.random();
    let k = ((-u * any).ln_1p() / (-p).ln_1p()).floor();
    (k.max(0.0) as usize).min(n - 1)
}

/// As [`transmit`] but conditioned on at least one error, together with the
/// probability of that event. `None` when errors are impossible.
pub fn transmit_corrupted(
    bytes: &[u8],
    nbits: usize,
    n: usize,
    rho: f64,
    mode: ErrorMode,
    rng: &mut impl Rng,
) -> Option<(TransmissionReport, f64)> {
    assert!(n > 0, "packet size must be positive");
    let nbits = nbits.min(bytes.len() * 8);
    let rho = rho.clamp(0.0, 1.0);
    let packets = nbits.div_ceil(n);
    if rho == 0.0 || nbits == 0 {
        return None;
    }
    let mut received = bytes.to_vec();
    let mut mask = vec![false; packets];
    let flip = |buf: &mut [u8], i: usize| buf[i / 8] ^= 0x80 >> (i % 8);
    let any = match mode {
        ErrorMode::Packet => {
            let first = first_hit(rho, packets, rng);
            for (t, hit) in mask.iter_mut().enumerate().skip(first) {
                if t == first || rng.random::<f64>() < rho {
                    *hit = true;
                    for i in t * n..((t + 1) * n).min(nbits) {
                        if rng.random::<bool>() {
                            flip(&mut received, i);
                        }
                    }
                }
            }
            crate::distortion::loss_probability(rho, packets as f64)
        }
        ErrorMode::Bit => {
            let rho_b = bit_flip_probability(rho, n);
            if rho_b <= 0.0 {
                return None;
            }
            let mut i = first_hit(rho_b, nbits, rng) as u64;
            if rho_b >= 1.0 {
                for i in 0..nbits {
                    flip(&mut received, i);
                }
                mask.fill(true);
            } else {
                let gaps = Geometric::new(rho_b).expect("probability in (0, 1)");
                while i < nbits as u64 {
                    let pos = i as usize;
                    flip(&mut received, pos);
                    mask[pos / n] = true;
                    i = i.saturating_add(1).saturating_add(gaps.sample(rng));
                }
            }
            packet_error_from_bits(rho_b, nbits)
        }
    };
    Some((TransmissionReport { received, error_mask: mask }, any))
}
