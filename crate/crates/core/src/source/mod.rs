//! Synthetic sparse-Gaussian source with a block hyper-prior structure, the
//! linear recovery map and quality metrics.

pub mod trainer;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, CodecParams, SourceCodecModel};
use crate::density::DEFAULT_TAIL_MASS;

/// Ceiling reported by [`quality_db`] for a perfect reconstruction.
pub const QUALITY_CAP_DB: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SourceError {
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Shape of the recovery map W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// W = scale · I.
    #[default]
    Identity,
    /// Block-diagonal W whose blocks are independent random orthogonal matrices, times scale.
    Orthogonal,
}

/// Parameters of the synthetic source. Block σ values are drawn from `levels`
/// with `level_probs`; the drawn level index is the side information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSourceSpec {
    pub k: usize,
    pub d: usize,
    pub levels: Vec<f64>,
    pub level_probs: Vec<f64>,
    /// Standard deviation of the per-block means.
    pub mean_std: f64,
    /// Levels at or below this σ count as sparse.
    pub sigma_small: f64,
    pub m: usize,
    pub decoder: DecoderKind,
    pub decoder_block: usize,
    pub decoder_scale: f64,
    /// Seed fixing the block means and W.
    pub seed: u64,
}

impl Default for SyntheticSourceSpec {
    fn default() -> Self {
        Self {
            k: 4096,
            d: 64,
            levels: vec![0.05, 0.3, 1.0, 3.0],
            level_probs: vec![0.55, 0.2, 0.15, 0.1],
            mean_std: 0.1,
            sigma_small: 0.05,
            m: 4096,
            decoder: DecoderKind::Identity,
            decoder_block: 64,
            decoder_scale: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticSourceSpec {
    pub fn block_size(&self) -> usize {
        self.k / self.d.max(1)
    }

    /// Share of elements whose block σ is at most `sigma_small`.
    pub fn sparsity(&self) -> f64 {
        self.levels.iter().zip(&self.level_probs).filter(|(s, _)| **s <= self.sigma_small).map(|(_, p)| p).sum()
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        let bad = |m: String| Err(SourceError::InvalidSpec(m));
        if self.k == 0 || self.d == 0 || !self.k.is_multiple_of(self.d) {
            return bad(format!("K = {} must be a positive multiple of D = {}", self.k, self.d));
        }
        if self.levels.is_empty() || self.levels.len() != self.level_probs.len() {
            return bad("levels and level_probs must be nonempty and equal length".into());
        }
        if self.levels.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("levels must be positive".into());
        }
        if self.level_probs.iter().any(|&p| !(p >= 0.0)) {
            return bad("level_probs must be nonnegative".into());
        }
        if (self.level_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("level_probs must sum to 1".into());
        }
        if !(self.mean_std >= 0.0 && self.mean_std.is_finite()) {
            return bad("mean_std must be finite and nonnegative".into());
        }
        if !(self.decoder_scale > 0.0 && self.decoder_scale.is_finite()) {
            return bad("decoder_scale must be positive".into());
        }
        if self.m != self.k {
            return bad(format!("M = {} must equal K = {} for the built-in decoders", self.m, self.k));
        }
        if self.decoder == DecoderKind::Orthogonal
            && (self.decoder_block == 0 || !self.k.is_multiple_of(self.decoder_block))
        {
            return bad("decoder_block must divide K".into());
        }
        Ok(())
    }
}

/// Linear recovery map x̂ = W ŷ.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearDecoder {
    Identity { k: usize, scale: f64 },
    BlockOrthogonal { blocks: Vec<DMatrix<f64>>, scale: f64 },
    Dense(DMatrix<f64>),
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl LinearDecoder {
    pub fn k(&self) -> usize {
        match self {
            Self::Identity { k, .. } => *k,
            Self::BlockOrthogonal { blocks, .. } => blocks.iter().map(|b| b.ncols()).sum(),
            Self::Dense(w) => w.ncols(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Self::Identity { k, .. } => *k,
            Self::BlockOrthogonal { blocks, .. } => blocks.iter().map(|b| b.nrows()).sum(),
            Self::Dense(w) => w.nrows(),
        }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity { scale, .. } => y.iter().map(|v| v * scale).collect(),
            Self::BlockOrthogonal { blocks, scale } => {
                let mut out = Vec::with_capacity(y.len());
                let mut off = 0;
                for b in blocks {
                    let n = b.ncols();
                    let seg = &y[off..off + n];
                    for r in 0..b.nrows() {
                        let row = b.row(r);
                        let dot: f64 = row.iter().zip(seg).map(|(w, v)| w * v).sum();
                        out.push(dot * scale);
                    }
                    off += n;
                }
                out
            }
            Self::Dense(w) => {
                let v = nalgebra::DVector::from_column_slice(y);
                (w * v).as_slice().to_vec()
            }
        }
    }

    /// ‖x − W ŷ‖².
    pub fn squared_error(&self, x: &[f64], y_hat: &[f64]) -> f64 {
        match self {
            Self::Identity { scale, .. } => x.iter().zip(y_hat).map(|(a, b)| (a - scale * b).powi(2)).sum(),
            _ => self.apply(y_hat).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum(),
        }
    }

    /// ‖W e‖².
    pub fn error_energy(&self, e: &[f64]) -> f64 {
        match self {
            Self::Identity { scale, .. } | Self::BlockOrthogonal { scale, .. } => {
                scale * scale * e.iter().map(|v| v * v).sum::<f64>()
            }
            Self::Dense(_) => self.apply(e).iter().map(|v| v * v).sum(),
        }
    }

    /// Largest squared singular value of W.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Identity { scale, .. } | Self::BlockOrthogonal { scale, .. } => scale * scale,
            Self::Dense(w) => crate::distortion::lipschitz_linear(w),
        }
    }

    /// Tr(WᵀW).
    pub fn frobenius_sq(&self) -> f64 {
        match self {
            Self::Identity { k, scale } => *k as f64 * scale * scale,
            Self::BlockOrthogonal { blocks, scale } => {
                blocks.iter().map(|b| b.norm_squared()).sum::<f64>() * scale * scale
            }
            Self::Dense(w) => w.norm_squared(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Identity { k, scale } => DMatrix::identity(*k, *k) * *scale,
            Self::BlockOrthogonal { blocks, scale } => {
                let mut w = DMatrix::zeros(self.m(), self.k());
                let (mut r0, mut c0) = (0, 0);
                for b in blocks {
                    w.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(&(b * *scale));
                    r0 += b.nrows();
                    c0 += b.ncols();
                }
                w
            }
            Self::Dense(w) => w.clone(),
        }
    }
}

/// Samples drawn from the source: features, side information and targets x = W y.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<i64>>,
    pub x: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A realized source: the spec plus the block means and W fixed by its seed.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SyntheticSourceSpec,
    block_means: Vec<f64>,
    decoder: LinearDecoder,
    level_index: WeightedIndex<f64>,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSourceSpec) -> Result<Self, SourceError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let block_means = (0..spec.d).map(|_| spec.mean_std * rng.sample::<f64, _>(StandardNormal)).collect();
        let decoder = match spec.decoder {
            DecoderKind::Identity => LinearDecoder::Identity { k: spec.k, scale: spec.decoder_scale },
            DecoderKind::Orthogonal => LinearDecoder::BlockOrthogonal {
                blocks: (0..spec.k / spec.decoder_block)
                    .map(|_| random_orthogonal(spec.decoder_block, &mut rng))
                    .collect(),
                scale: spec.decoder_scale,
            },
        };
        let level_index = WeightedIndex::new(&spec.level_probs).map_err(|e| SourceError::InvalidSpec(e.to_string()))?;
        Ok(Self { spec, block_means, decoder, level_index })
    }

    pub fn spec(&self) -> &SyntheticSourceSpec {
        &self.spec
    }

    pub fn block_means(&self) -> &[f64] {
        &self.block_means
    }

    pub fn decoder(&self) -> &LinearDecoder {
        &self.decoder
    }

    /// Draws `n` samples: block levels from the hyper law, y_i ~ N(u_block, σ_level²), x = W y.
    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Batch {
        let bs = self.spec.block_size();
        let mut batch = Batch::default();
        for _ in 0..n {
            let z: Vec<i64> = (0..self.spec.d).map(|_| self.level_index.sample(rng) as i64).collect();
            let mut y = Vec::with_capacity(self.spec.k);
            for (j, &l) in z.iter().enumerate() {
                let (u, s) = (self.block_means[j], self.spec.levels[l as usize]);
                for _ in 0..bs {
                    y.push(u + s * rng.sample::<f64, _>(StandardNormal));
                }
            }
            let x = self.decoder.apply(&y);
            batch.y.push(y);
            batch.z.push(z);
            batch.x.push(x);
        }
        batch
    }

    /// Codec model with quantization step `delta` and the default tail mass.
    pub fn codec_model(&self, delta: f64) -> Result<SourceCodecModel, SourceError> {
        Ok(SourceCodecModel::new(CodecParams {
            delta,
            block_size: self.spec.block_size(),
            block_means: self.block_means.clone(),
            levels: self.spec.levels.clone(),
            level_probs: self.spec.level_probs.clone(),
            tail_mass: DEFAULT_TAIL_MASS,
        })?)
    }

    /// Per-element conditional variances σ̄_i² given side information `z`.
    pub fn conditional_variances(&self, z: &[i64]) -> Vec<f64> {
        let bs = self.spec.block_size();
        z.iter().flat_map(|&l| std::iter::repeat_n(self.spec.levels[l as usize].powi(2), bs)).collect()
    }
}

/// Mean squared error per element.
pub fn mse(x: &[f64], x_hat: &[f64]) -> Result<f64, SourceError> {
    if x.len() != x_hat.len() {
        return Err(SourceError::LengthMismatch(x.len(), x_hat.len()));
    }
    if x.is_empty() {
        return Err(SourceError::Empty);
    }
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

/// 10·log10(1/MSE), capped at [`QUALITY_CAP_DB`].
pub fn mse_to_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        return QUALITY_CAP_DB;
    }
    (-10.0 * mse.log10()).min(QUALITY_CAP_DB)
}

pub fn quality_db(x: &[f64], x_hat: &[f64]) -> Result<f64, SourceError> {
    Ok(mse_to_db(mse(x, x_hat)?))
}
