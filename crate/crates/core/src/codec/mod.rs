//! Surrogate source codec: uniform scalar quantization, range coding of the
//! features conditioned on side information, and the bitstream container.

pub mod bits;
pub mod bitstream;
pub mod range_coder;

use rayon::prelude::*;

use crate::density::{build_pmf_table, DensityError, FactorizedPrior, PmfTable};
use crate::source::{Batch, LinearDecoder};
use bits::{BitBuf, BitReader};
pub use bitstream::{Bitstream, HeaderError, HEADER_BITS};
use range_coder::{Coded, CoderError, RangeDecoder, RangeEncoder};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite feature at index {0}")]
    NonFinite(usize),
    #[error("side information z[{index}] = {value} is not a valid level")]
    InvalidSideInfo { index: usize, value: i64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error("header rejected: {0}")]
    Header(#[from] HeaderError),
    #[error("stream does not match the model ({0})")]
    Incompatible(&'static str),
}

/// Quantizes with step `delta`, rounding half away from zero.
pub fn quantize(y: &[f64], delta: f64) -> Vec<i64> {
    y.iter().map(|&v| (v / delta).round() as i64).collect()
}

pub fn dequantize(q: &[i64], delta: f64) -> Vec<f64> {
    q.iter().map(|&k| k as f64 * delta).collect()
}

/// Quantized features and side information of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedFeatures {
    pub y: Vec<i64>,
    pub z: Vec<i64>,
}

/// Everything needed to build a [`SourceCodecModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub delta: f64,
    pub block_size: usize,
    /// Mean of each block (length D).
    pub block_means: Vec<f64>,
    /// Standard deviation selected by each side-information level.
    pub levels: Vec<f64>,
    /// Prior probability of each level.
    pub level_probs: Vec<f64>,
    pub tail_mass: f64,
}

/// One codec configuration: a quantization step plus the conditional tables
/// for every (block, level) pair.
#[derive(Debug, Clone)]
pub struct SourceCodecModel {
    delta: f64,
    k: usize,
    d: usize,
    block_size: usize,
    levels: Vec<f64>,
    block_means: Vec<f64>,
    mean_field: Vec<f64>,
    hyper_prior: FactorizedPrior,
    tables: Vec<PmfTable>,
    default_table: PmfTable,
    sigma_default: f64,
}

impl SourceCodecModel {
    pub fn new(p: CodecParams) -> Result<Self, CodecError> {
        if !(p.delta > 0.0 && p.delta.is_finite()) {
            return Err(CodecError::InvalidModel(format!("delta = {}", p.delta)));
        }
        if p.block_size == 0 || p.block_means.is_empty() {
            return Err(CodecError::InvalidModel("empty block structure".into()));
        }
        if p.levels.is_empty() || p.levels.len() != p.level_probs.len() {
            return Err(CodecError::InvalidModel("levels and level_probs differ".into()));
        }
        let d = p.block_means.len();
        let k = d * p.block_size;
        let nl = p.levels.len();
        let mut tables = Vec::with_capacity(d * nl);
        for &u in &p.block_means {
            for &s in &p.levels {
                tables.push(build_pmf_table(u, s, p.delta, p.tail_mass)?);
            }
        }
        let psum: f64 = p.level_probs.iter().sum();
        let sigma_default = (p.levels.iter().zip(&p.level_probs).map(|(s, q)| q / psum * s * s).sum::<f64>()).sqrt();
        let default_table = build_pmf_table(0.0, sigma_default, p.delta, p.tail_mass)?;
        let hyper_prior = FactorizedPrior::histogram(d, 0, &p.level_probs, p.tail_mass)?;
        let mean_field = p.block_means.iter().flat_map(|&u| std::iter::repeat_n(u, p.block_size)).collect();
        Ok(Self {
            delta: p.delta,
            k,
            d,
            block_size: p.block_size,
            levels: p.levels,
            block_means: p.block_means,
            mean_field,
            hyper_prior,
            tables,
            default_table,
            sigma_default,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn block_means(&self) -> &[f64] {
        &self.block_means
    }

    /// Per-element means ū used to fill undecodable positions.
    pub fn mean_field(&self) -> &[f64] {
        &self.mean_field
    }

    pub fn hyper_prior(&self) -> &FactorizedPrior {
        &self.hyper_prior
    }

    pub fn sigma_default(&self) -> f64 {
        self.sigma_default
    }

    /// Conditional table of block `j` at side-information level `level`.
    pub fn table(&self, j: usize, level: usize) -> &PmfTable {
        &self.tables[j * self.levels.len() + level]
    }

    pub fn default_table(&self) -> &PmfTable {
        &self.default_table
    }

    fn valid_level(&self, z: i64) -> Option<usize> {
        usize::try_from(z).ok().filter(|&l| l < self.levels.len())
    }

    fn check_input(&self, y: &[f64], z: &[i64]) -> Result<Vec<usize>, CodecError> {
        if y.len() != self.k {
            return Err(CodecError::LengthMismatch { what: "y", expected: self.k, got: y.len() });
        }
        if z.len() != self.d {
            return Err(CodecError::LengthMismatch { what: "z", expected: self.d, got: z.len() });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite(i));
        }
        z.iter()
            .enumerate()
            .map(|(index, &value)| self.valid_level(value).ok_or(CodecError::InvalidSideInfo { index, value }))
            .collect()
    }

    /// Quantizes `y` and pairs it with the side information.
    pub fn quantize_features(&self, y: &[f64], z: &[i64]) -> Result<QuantizedFeatures, CodecError> {
        self.check_input(y, z)?;
        Ok(QuantizedFeatures { y: quantize(y, self.delta), z: z.to_vec() })
    }

    fn encode_z(&self, z: &[i64]) -> Result<BitBuf, CodecError> {
        let mut enc = RangeEncoder::new();
        for (t, &v) in self.hyper_prior.tables().iter().zip(z) {
            enc.encode_value(t, v)?;
        }
        Ok(enc.finish())
    }

    fn encode_y(&self, yq: &[i64], z: &[i64]) -> Result<BitBuf, CodecError> {
        let mut enc = RangeEncoder::new();
        for (j, chunk) in yq.chunks(self.block_size).enumerate() {
            let t = self.table(j, z[j] as usize);
            for &v in chunk {
                enc.encode_value(t, v)?;
            }
        }
        Ok(enc.finish())
    }

    /// Ideal code lengths (bits) of the features and side information under the model
    /// probabilities; escaped features also count the raw bits of their distance past the edge.
    pub fn information(&self, q: &QuantizedFeatures) -> (f64, f64) {
        let mut y_bits = 0.0;
        for (i, &v) in q.y.iter().enumerate() {
            let j = i / self.block_size;
            let t = self.table(j, q.z[j] as usize);
            y_bits -= t.probability(v).log2();
            if !t.contains(v) {
                y_bits += range_coder::escape_bits(t, v);
            }
        }
        (y_bits, self.hyper_prior.information(&q.z))
    }

    /// Same as [`Self::information`] but under the 16-bit quantized frequencies the coder uses.
    pub fn quantized_information(&self, q: &QuantizedFeatures) -> (f64, f64) {
        let y_bits =
            q.y.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let j = i / self.block_size;
                    range_coder::quantized_code_length(self.table(j, q.z[j] as usize), v)
                })
                .sum();
        let z_bits =
            self.hyper_prior.tables().iter().zip(&q.z).map(|(t, &v)| range_coder::quantized_code_length(t, v)).sum();
        (y_bits, z_bits)
    }
}

/// Encodes one sample: z̃ under the factorized prior, then ỹ under the tables selected by z̃.
pub fn encode(y: &[f64], z: &[i64], model: &SourceCodecModel) -> Result<Bitstream, CodecError> {
    model.check_input(y, z)?;
    let yq = quantize(y, model.delta);
    let zb = model.encode_z(z)?;
    let yb = model.encode_y(&yq, z)?;
    Ok(Bitstream::new(model.k as u32, model.d as u32, model.delta, &zb, &yb))
}

/// How much of a stream survived decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeStatus {
    /// Side information re-encoded to exactly the received bits.
    pub z_valid: bool,
    /// Features re-encoded to exactly the received bits.
    pub y_valid: bool,
    /// Feature symbols read before the payload ran out.
    pub symbols_decoded: usize,
}

impl DecodeStatus {
    pub fn is_clean(&self) -> bool {
        self.z_valid && self.y_valid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Reconstructed features ŷ.
    pub y_hat: Vec<f64>,
    /// Decoded feature indices; positions never decoded hold the rounded mean.
    pub y_idx: Vec<i64>,
    pub z: Vec<i64>,
    pub status: DecodeStatus,
}

/// Decodes a received byte stream. A rejected header is an error; payload
/// corruption never is. Corrupted side information switches every block to
/// the default table, undecoded features take the block mean, and features
/// from a stream that fails the re-encode check are clamped to the table support.
pub fn decode(bytes: &[u8], model: &SourceCodecModel) -> Result<Decoded, CodecError> {
    let s = Bitstream::from_bytes(bytes)?;
    if s.k as usize != model.k {
        return Err(CodecError::Incompatible("K"));
    }
    if s.d as usize != model.d {
        return Err(CodecError::Incompatible("D"));
    }
    if s.delta.to_bits() != model.delta.to_bits() {
        return Err(CodecError::Incompatible("delta"));
    }
    let payload = s.payload();
    let b_z = s.b_z as usize;
    let b_y = s.b_y as usize;

    let mut dec = RangeDecoder::new(BitReader::new(payload, 0, b_z));
    let mut z = Vec::with_capacity(model.d);
    for t in model.hyper_prior.tables() {
        if dec.consumed() > b_z {
            break;
        }
        z.push(dec.decode_value(t).0);
    }
    let mut z_valid = z.len() == model.d && z.iter().all(|&v| model.valid_level(v).is_some());
    if z_valid {
        z_valid = model.encode_z(&z).map(|b| b.matches(payload, 0, b_z)).unwrap_or(false);
    }
    z.resize(model.d, 0);
    let max_level = model.levels.len() as i64 - 1;
    for v in &mut z {
        *v = (*v).clamp(0, max_level);
    }

    let table_for = |j: usize| {
        if z_valid {
            model.table(j, z[j] as usize)
        } else {
            &model.default_table
        }
    };
    let mut dec = RangeDecoder::new(BitReader::new(payload, b_z, b_y));
    let mut yq = Vec::with_capacity(model.k);
    let mut escaped = false;
    for i in 0..model.k {
        if dec.consumed() > b_y {
            break;
        }
        let (v, how) = dec.decode_value(table_for(i / model.block_size));
        escaped |= how == Coded::Escaped;
        yq.push(v);
    }
    let symbols_decoded = yq.len();
    let mut y_valid = z_valid && symbols_decoded == model.k;
    if y_valid {
        y_valid = model.encode_y(&yq, &z).map(|b| b.matches(payload, b_z, b_y)).unwrap_or(false);
    }
    if !y_valid && (escaped || !z_valid) {
        for (i, v) in yq.iter_mut().enumerate() {
            *v = table_for(i / model.block_size).clamp(*v);
        }
    }
    let mut y_hat = dequantize(&yq, model.delta);
    for i in symbols_decoded..model.k {
        let u = model.mean_field[i];
        y_hat.push(u);
        yq.push((u / model.delta).round() as i64);
    }
    Ok(Decoded { y_hat, y_idx: yq, z, status: DecodeStatus { z_valid, y_valid, symbols_decoded } })
}

/// Decodes, substituting the mean field for the whole sample when the header is rejected.
/// The flag is false when the header failed.
pub fn decode_or_mean(bytes: &[u8], model: &SourceCodecModel) -> (Vec<f64>, bool) {
    match decode(bytes, model) {
        Ok(d) => (d.y_hat, true),
        Err(_) => (model.mean_field.clone(), false),
    }
}

/// Mean coded bits per sample (header included) and mean reconstruction MSE per output element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDistortion {
    pub rate_bits: f64,
    pub distortion: f64,
}

/// Encodes every sample of `batch` and reconstructs through `decoder` over an error-free channel.
pub fn measure_rate_distortion(
    model: &SourceCodecModel,
    batch: &Batch,
    decoder: &LinearDecoder,
) -> Result<RateDistortion, CodecError> {
    if batch.is_empty() {
        return Err(CodecError::EmptyBatch);
    }
    let per_sample: Vec<(usize, f64)> = (0..batch.len())
        .into_par_iter()
        .map(|n| {
            let s = encode(&batch.y[n], &batch.z[n], model)?;
            let y_hat = dequantize(&quantize(&batch.y[n], model.delta), model.delta);
            let err = decoder.squared_error(&batch.x[n], &y_hat);
            Ok((s.total_bits(), err))
        })
        .collect::<Result<_, CodecError>>()?;
    let n = batch.len() as f64;
    let m = decoder.m() as f64;
    Ok(RateDistortion {
        rate_bits: per_sample.iter().map(|p| p.0 as f64).sum::<f64>() / n,
        distortion: per_sample.iter().map(|p| p.1).sum::<f64>() / (n * m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(delta: f64) -> SourceCodecModel {
        SourceCodecModel::new(CodecParams {
            delta,
            block_size: 8,
            block_means: vec![0.0, 0.1, -0.2, 0.05],
            levels: vec![0.05, 1.0, 3.0],
            level_probs: vec![0.5, 0.3, 0.2],
            tail_mass: 1e-6,
        })
        .unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&[0.4, -0.4], 1.0), vec![0, 0]);
        assert_eq!(quantize(&[0.5, -0.5], 1.0), vec![1, -1]);
        let q = quantize(&[1.2], 0.5);
        assert_eq!(q, vec![2]);
        assert!((dequantize(&q, 0.5)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn default_sigma_is_rms_level() {
        let m = toy_model(1.0);
        let expect = (0.5 * 0.0025 + 0.3 * 1.0 + 0.2 * 9.0f64).sqrt();
        assert!((m.sigma_default() - expect).abs() < 1e-12);
        assert_eq!(m.mean_field().len(), 32);
        assert_eq!(m.mean_field()[9], 0.1);
    }

    #[test]
    fn roundtrip_toy() {
        let m = toy_model(0.5);
        let y: Vec<f64> = (0..32).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let z = vec![0, 1, 2, 1];
        let s = encode(&y, &z, &m).unwrap();
        let d = decode(&s.to_bytes(), &m).unwrap();
        assert!(d.status.is_clean());
        assert_eq!(d.y_idx, quantize(&y, 0.5));
        assert_eq!(d.z, z);
        assert_eq!(d.y_hat, dequantize(&quantize(&y, 0.5), 0.5));
    }

    #[test]
    fn input_validation() {
        let m = toy_model(1.0);
        let mut y = vec![0.0; 32];
        assert!(matches!(encode(&y[..3], &[0; 4], &m), Err(CodecError::LengthMismatch { .. })));
        assert!(matches!(encode(&y, &[0, 0, 9, 0], &m), Err(CodecError::InvalidSideInfo { .. })));
        y[5] = f64::NAN;
        assert_eq!(encode(&y, &[0; 4], &m), Err(CodecError::NonFinite(5)));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let s = encode(&[0.0; 32], &[0; 4], &toy_model(1.0)).unwrap();
        assert_eq!(decode(&s.to_bytes(), &toy_model(0.5)).unwrap_err(), CodecError::Incompatible("delta"));
        let (y, ok) = decode_or_mean(&s.to_bytes()[..12], &toy_model(1.0));
        assert!(!ok);
        assert_eq!(y, toy_model(1.0).mean_field());
    }
}
