//! Gaussian bin probabilities, PMF tables for the range coder and entropy
//! bookkeeping for the conditional feature model and the side-information prior.

use libm::erfc;
use std::f64::consts::{E, FRAC_1_SQRT_2, PI};

/// Smallest standard deviation accepted by [`build_pmf_table`].
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Per-entry probability floor (one count of the 16-bit frequency table).
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;
/// Default mass left outside the explicit support of a table.
pub const DEFAULT_TAIL_MASS: f64 = 1e-6;
/// Precision of the quantized frequency tables.
pub const FREQ_BITS: u32 = 16;
/// Sum of every quantized frequency table.
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
/// Largest explicit support a table may have; wider Gaussians spill into the escape.
pub const MAX_SUPPORT: usize = 1 << 15;

/// Errors raised by density computations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    /// A scale, step or mass parameter is outside its domain.
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    /// A table was requested with no symbols.
    #[error("probability table has no symbols")]
    EmptyTable,
    /// Mean and standard deviation vectors disagree in length.
    #[error("length mismatch: {means} means vs {std_devs} standard deviations")]
    LengthMismatch { means: usize, std_devs: usize },
}

fn check_positive(name: &'static str, value: f64) -> Result<(), DensityError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DensityError::InvalidParameter { name, value })
    }
}

/// Per-element mean and standard deviation of the conditional Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    std_dev: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, std_dev: Vec<f64>) -> Result<Self, DensityError> {
        if mean.len() != std_dev.len() {
            return Err(DensityError::LengthMismatch { means: mean.len(), std_devs: std_dev.len() });
        }
        for &s in &std_dev {
            check_positive("sigma", s)?;
        }
        for &u in &mean {
            if !u.is_finite() {
                return Err(DensityError::InvalidParameter { name: "mean", value: u });
            }
        }
        Ok(Self { mean, std_dev })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std_dev(&self) -> &[f64] {
        &self.std_dev
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail, Q(x) = 1 - Φ(x).
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Tail mass on the short side of `x`: Φ(x) for x < 0, Q(x) otherwise.
fn tail(x: f64) -> f64 {
    if x < 0.0 {
        normal_cdf(x)
    } else {
        normal_sf(x)
    }
}

/// Mass of the standardized interval [a, b], computed on whichever side avoids cancellation.
fn interval_mass(a: f64, b: f64, ta: f64, tb: f64) -> f64 {
    let p = if a >= 0.0 {
        ta - tb
    } else if b <= 0.0 {
        tb - ta
    } else {
        1.0 - (ta + tb)
    };
    p.clamp(0.0, 1.0)
}

fn bin_edges(k: i64, u: f64, sigma: f64, delta: f64) -> (f64, f64) {
    let kf = k as f64;
    let a = ((kf - 0.5) * delta - u) / sigma;
    let b = ((kf + 0.5) * delta - u) / sigma;
    (a, b)
}

/// Probability that a N(u, σ²) variable quantizes to index `k` with step `delta`.
pub fn bin_probability(k: i64, u: f64, sigma: f64, delta: f64) -> Result<f64, DensityError> {
    check_positive("sigma", sigma)?;
    check_positive("delta", delta)?;
    if !u.is_finite() {
        return Err(DensityError::InvalidParameter { name: "mean", value: u });
    }
    let (a, b) = bin_edges(k, u, sigma, delta);
    Ok(interval_mass(a, b, tail(a), tail(b)))
}

/// A finite probability table over the integer interval `[k_min, k_max]`
/// plus an escape symbol that covers everything outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfTable {
    k_min: i64,
    probs: Vec<f64>,
    escape_mass: f64,
    freqs: Vec<u32>,
    cum: Vec<u32>,
    sigma_clamped: bool,
}

impl PmfTable {
    /// Builds a table from explicit probabilities. Entries are floored at
    /// [`PROB_FLOOR`] and renormalized together with `escape_mass`; a zero
    /// escape mass means the table has no escape symbol.
    pub fn from_probabilities(k_min: i64, probs: Vec<f64>, escape_mass: f64) -> Result<Self, DensityError> {
        if probs.is_empty() {
            return Err(DensityError::EmptyTable);
        }
        if !(0.0..1.0).contains(&escape_mass) {
            return Err(DensityError::InvalidParameter { name: "escape_mass", value: escape_mass });
        }
        if probs.len() > MAX_SUPPORT {
            return Err(DensityError::InvalidParameter { name: "support", value: probs.len() as f64 });
        }
        let mut probs: Vec<f64> =
            probs.into_iter().map(|p| if p.is_finite() { p.max(PROB_FLOOR) } else { PROB_FLOOR }).collect();
        let mut escape = if escape_mass > 0.0 { escape_mass.max(PROB_FLOOR) } else { 0.0 };
        let total: f64 = probs.iter().sum::<f64>() + escape;
        for p in &mut probs {
            *p /= total;
        }
        escape /= total;
        let freqs = quantize_frequencies(&probs, escape);
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in &freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Ok(Self { k_min, probs, escape_mass: escape, freqs, cum, sigma_clamped: false })
    }

    pub fn k_min(&self) -> i64 {
        self.k_min
    }

    pub fn k_max(&self) -> i64 {
        self.k_min + self.probs.len() as i64 - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn escape_mass(&self) -> f64 {
        self.escape_mass
    }

    pub fn has_escape(&self) -> bool {
        self.escape_mass > 0.0
    }

    /// True when the requested σ was below [`SIGMA_FLOOR`] and got clamped.
    pub fn sigma_clamped(&self) -> bool {
        self.sigma_clamped
    }

    /// Model probability of integer `k`; out-of-support values get the escape mass.
    pub fn probability(&self, k: i64) -> f64 {
        match self.index_of(k) {
            Some(i) => self.probs[i],
            None => self.escape_mass,
        }
    }

    pub fn contains(&self, k: i64) -> bool {
        self.index_of(k).is_some()
    }

    pub(crate) fn index_of(&self, k: i64) -> Option<usize> {
        let i = k.checked_sub(self.k_min)?;
        if i >= 0 && (i as usize) < self.probs.len() {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Number of coder symbols, including the escape symbol if present.
    pub fn symbol_count(&self) -> usize {
        self.freqs.len()
    }

    /// Index of the escape symbol in the frequency table.
    pub fn escape_symbol(&self) -> Option<usize> {
        self.has_escape().then_some(self.probs.len())
    }

    /// Quantized frequencies (summing to [`FREQ_TOTAL`]).
    pub fn frequencies(&self) -> &[u32] {
        &self.freqs
    }

    /// Cumulative frequencies, `cum[s]..cum[s + 1]` is the slot of symbol `s`.
    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    /// Symbol whose cumulative slot contains `q` (`q < FREQ_TOTAL`).
    pub fn symbol_for(&self, q: u32) -> usize {
        self.cum.partition_point(|&c| c <= q) - 1
    }

    /// Clamps `k` into the explicit support.
    pub fn clamp(&self, k: i64) -> i64 {
        k.clamp(self.k_min, self.k_max())
    }
}

/// Distributes [`FREQ_TOTAL`] counts as `1 + p·(T − n)` with largest-remainder rounding,
/// so every symbol gets at least one count and the total is exact.
fn quantize_frequencies(probs: &[f64], escape: f64) -> Vec<u32> {
    let mut masses: Vec<f64> = probs.to_vec();
    if escape > 0.0 {
        masses.push(escape);
    }
    let n = masses.len();
    let spare = (FREQ_TOTAL as usize - n) as f64;
    let sum: f64 = masses.iter().sum();
    let mut freqs = Vec::with_capacity(n);
    let mut rema = Vec::with_capacity(n);
    let mut used = 0u64;
    for (i, &m) in masses.iter().enumerate() {
        let share = m / sum * spare;
        let whole = share.floor();
        freqs.push(1 + whole as u32);
        rema.push((share - whole, i));
        used += 1 + whole as u64;
    }
    let mut left = FREQ_TOTAL as u64 - used;
    rema.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut it = rema.iter().cycle();
    while left > 0 {
        let &(_, i) = it.next().expect("nonempty");
        freqs[i] += 1;
        left -= 1;
    }
    freqs
}

/// Materializes the discretized N(u, σ²) model with step `delta` as a [`PmfTable`].
/// The support grows outward from the bin of `u` until each side leaves at most
/// `tail_mass / 2` uncovered; the remainder becomes the escape mass.
pub fn build_pmf_table(u: f64, sigma: f64, delta: f64, tail_mass: f64) -> Result<PmfTable, DensityError> {
    check_positive("delta", delta)?;
    if !(tail_mass > 0.0 && tail_mass < 1e-3) {
        return Err(DensityError::InvalidParameter { name: "tail_mass", value: tail_mass });
    }
    if !u.is_finite() {
        return Err(DensityError::InvalidParameter { name: "mean", value: u });
    }
    if sigma.is_nan() || sigma.is_infinite() {
        return Err(DensityError::InvalidParameter { name: "sigma", value: sigma });
    }
    let clamped = sigma < SIGMA_FLOOR;
    let sigma = sigma.max(SIGMA_FLOOR);
    let center = (u / delta).round() as i64;
    let half = tail_mass / 2.0;
    let mut lo = center;
    let mut hi = center;
    // Expand until the mass below lo - 1/2 and above hi + 1/2 are each within budget.
    while normal_cdf(((lo as f64 - 0.5) * delta - u) / sigma) > half && ((hi - lo) as usize) + 1 < MAX_SUPPORT {
        lo -= 1;
    }
    while normal_sf(((hi as f64 + 0.5) * delta - u) / sigma) > half && ((hi - lo) as usize) + 1 < MAX_SUPPORT {
        hi += 1;
    }
    let n = (hi - lo + 1) as usize;
    let mut edges = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let x = (((lo + j as i64) as f64 - 0.5) * delta - u) / sigma;
        edges.push((x, tail(x)));
    }
    let mut probs = Vec::with_capacity(n);
    for j in 0..n {
        let (a, ta) = edges[j];
        let (b, tb) = edges[j + 1];
        probs.push(interval_mass(a, b, ta, tb));
    }
    let covered: f64 = probs.iter().sum();
    let escape = (1.0 - covered).max(0.0).max(f64::MIN_POSITIVE);
    let mut table = PmfTable::from_probabilities(lo, probs, escape)?;
    table.sigma_clamped = clamped;
    Ok(table)
}

/// Shannon entropy of a table in bits, escape symbol included.
pub fn table_entropy(table: &PmfTable) -> f64 {
    let mut h = 0.0;
    for &p in table.probabilities().iter().chain(std::iter::once(&table.escape_mass)) {
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h.max(0.0)
}

/// Differential entropy of N(·, σ²) in bits.
pub fn gaussian_differential_entropy(sigma: f64) -> f64 {
    0.5 * (2.0 * PI * E * sigma * sigma).log2()
}

/// Ratio σ/Δ above which [`discretized_gaussian_entropy`] switches to the
/// asymptotic expansion h − log₂Δ + (log₂e / 24)(Δ/σ)².
pub const ASYMPTOTIC_RATIO: f64 = 64.0;

/// Entropy in bits of round(Y/Δ) for Y ~ N(u, σ²), without floors or escapes.
pub fn discretized_gaussian_entropy(u: f64, sigma: f64, delta: f64) -> Result<f64, DensityError> {
    check_positive("sigma", sigma)?;
    check_positive("delta", delta)?;
    let ratio = sigma / delta;
    if ratio >= ASYMPTOTIC_RATIO {
        let r = delta / sigma;
        return Ok(gaussian_differential_entropy(sigma) - delta.log2() + std::f64::consts::LOG2_E / 24.0 * r * r);
    }
    let lo = ((u - 8.5 * sigma) / delta).floor() as i64;
    let hi = ((u + 8.5 * sigma) / delta).ceil() as i64;
    let mut h = 0.0;
    let mut prev_x = ((lo as f64 - 0.5) * delta - u) / sigma;
    let mut prev_t = tail(prev_x);
    for k in lo..=hi {
        let x = ((k as f64 + 0.5) * delta - u) / sigma;
        let t = tail(x);
        let p = interval_mass(prev_x, x, prev_t, t);
        if p > 0.0 {
            h -= p * p.log2();
        }
        prev_x = x;
        prev_t = t;
    }
    Ok(h)
}

/// One side-information table per element of z̃.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior {
    tables: Vec<PmfTable>,
}

impl FactorizedPrior {
    pub fn new(tables: Vec<PmfTable>) -> Self {
        Self { tables }
    }

    /// Histogram-with-escape prior: the same level probabilities for each of `d` elements.
    pub fn histogram(d: usize, k_min: i64, probs: &[f64], tail_mass: f64) -> Result<Self, DensityError> {
        let table = PmfTable::from_probabilities(k_min, probs.to_vec(), tail_mass)?;
        Ok(Self { tables: vec![table; d] })
    }

    pub fn tables(&self) -> &[PmfTable] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Ideal code length of `z` in bits under the prior.
    pub fn information(&self, z: &[i64]) -> f64 {
        self.tables.iter().zip(z).map(|(t, &k)| -t.probability(k).log2()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from a 40-digit erf evaluation.
    const P00: f64 = 0.3829249225480262;
    const P10: f64 = 0.2417303374571288;
    const H_UNIT: f64 = 2.1048326541776687;

    #[test]
    fn bin_probability_matches_erf_reference() {
        assert!((bin_probability(0, 0.0, 1.0, 1.0).unwrap() - P00).abs() < 1e-14);
        assert!((bin_probability(1, 0.0, 1.0, 1.0).unwrap() - P10).abs() < 1e-14);
    }

    #[test]
    fn bin_probability_shift_invariance() {
        let a = bin_probability(5, 5.0, 2.0, 1.0).unwrap();
        let b = bin_probability(0, 0.0, 2.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn bin_probability_rejects_bad_parameters() {
        assert!(bin_probability(0, 0.0, 0.0, 1.0).is_err());
        assert!(bin_probability(0, 0.0, -1.0, 1.0).is_err());
        assert!(bin_probability(0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn offset_mean_ordering() {
        let p = |k| bin_probability(k, 0.4, 1.0, 1.0).unwrap();
        assert!((p(-1) - 0.15534356553075769).abs() < 1e-14);
        assert!((p(0) - 0.35576771193026949).abs() < 1e-14);
        assert!((p(1) - 0.32450610177658834).abs() < 1e-14);
        assert!(p(0) > p(1) && p(1) > p(-1));
        let t = build_pmf_table(0.4, 1.0, 1.0, DEFAULT_TAIL_MASS).unwrap();
        assert!(t.probability(0) > t.probability(1) && t.probability(1) > t.probability(-1));
    }

    #[test]
    fn unit_table_support_and_normalization() {
        let t = build_pmf_table(0.0, 1.0, 1.0, 1e-6).unwrap();
        assert!(t.k_min() <= -5 && t.k_max() >= 5);
        let s: f64 = t.probabilities().iter().sum::<f64>() + t.escape_mass();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(t.probabilities().iter().all(|&p| p > 0.0));
        assert_eq!(t.frequencies().iter().sum::<u32>(), FREQ_TOTAL);
        assert!(!t.sigma_clamped());
    }

    #[test]
    fn tiny_sigma_is_clamped() {
        let t = build_pmf_table(0.0, 1e-9, 1.0, 1e-6).unwrap();
        assert!(t.sigma_clamped());
        assert_eq!((t.k_min(), t.k_max()), (0, 0));
        assert!(t.probability(0) > 0.999);
    }

    #[test]
    fn entropy_of_unit_table() {
        let t = build_pmf_table(0.0, 1.0, 1.0, 1e-6).unwrap();
        // floors on the outermost bins and the escape add well under 1e-3 bits
        assert!((table_entropy(&t) - H_UNIT).abs() < 1e-3);
        assert!((discretized_gaussian_entropy(0.0, 1.0, 1.0).unwrap() - H_UNIT).abs() < 1e-12);
    }

    #[test]
    fn single_symbol_table_has_zero_entropy() {
        let t = PmfTable::from_probabilities(3, vec![1.0], 0.0).unwrap();
        assert_eq!(table_entropy(&t), 0.0);
        assert_eq!(t.frequencies(), &[FREQ_TOTAL]);
    }

    #[test]
    fn entropy_increases_with_sigma() {
        let mut last = -1.0;
        for i in 0..40 {
            let sigma = 0.05 * 1.15f64.powi(i);
            let h = table_entropy(&build_pmf_table(0.1, sigma, 1.0, 1e-6).unwrap());
            assert!(h > last, "sigma {sigma}: {h} <= {last}");
            last = h;
        }
    }

    #[test]
    fn entropy_converges_to_differential_entropy() {
        for (ratio, tol) in [(0.5, 0.1), (0.1, 0.05), (0.01, 0.02)] {
            let sigma = 1.0;
            let delta = ratio * sigma;
            let h = discretized_gaussian_entropy(0.3, sigma, delta).unwrap();
            let limit = gaussian_differential_entropy(sigma) - delta.log2();
            assert!((h - limit).abs() < tol, "ratio {ratio}: {h} vs {limit}");
        }
        for i in 0..20 {
            let sigma = 0.5 + 0.25 * i as f64;
            let h = discretized_gaussian_entropy(0.0, sigma, 1.0).unwrap();
            assert!(h > gaussian_differential_entropy(sigma) - 0.1);
        }
    }

    #[test]
    fn asymptotic_branch_is_continuous() {
        // the expansion at the switch point agrees with explicit summation
        let sigma = ASYMPTOTIC_RATIO * 0.999;
        let exact = discretized_gaussian_entropy(0.2, sigma, 1.0).unwrap();
        let asym = discretized_gaussian_entropy(0.2, ASYMPTOTIC_RATIO, 1.0).unwrap();
        let shift = (ASYMPTOTIC_RATIO / sigma).log2();
        assert!((asym - shift - exact).abs() < 1e-4);
    }

    #[test]
    fn histogram_prior() {
        let prior = FactorizedPrior::histogram(4, 0, &[0.55, 0.2, 0.15, 0.1], 1e-6).unwrap();
        assert_eq!(prior.len(), 4);
        let bits = prior.information(&[0, 0, 0, 0]);
        assert!((bits - 4.0 * -(0.55f64.log2())).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn normalization(u in -20.0f64..20.0, sigma in 0.01f64..10.0, delta in 0.05f64..5.0) {
            let lo = ((u - 9.0 * sigma) / delta).floor() as i64 - 1;
            let hi = ((u + 9.0 * sigma) / delta).ceil() as i64 + 1;
            let s: f64 = (lo..=hi).map(|k| bin_probability(k, u, sigma, delta).unwrap()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn symmetry(k in -50i64..50, u in -10.0f64..10.0, sigma in 0.01f64..10.0, delta in 0.05f64..5.0) {
            let a = bin_probability(k, u, sigma, delta).unwrap();
            let b = bin_probability(-k, -u, sigma, delta).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn table_invariants(u in -10.0f64..10.0, sigma in 1e-3f64..20.0, delta in 0.05f64..5.0) {
            let t = build_pmf_table(u, sigma, delta, DEFAULT_TAIL_MASS).unwrap();
            let s: f64 = t.probabilities().iter().sum::<f64>() + t.escape_mass();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(t.probabilities().iter().all(|&p| p > 0.0));
            let lo = ((t.k_min() as f64 - 0.5) * delta - u) / sigma;
            let hi = ((t.k_max() as f64 + 0.5) * delta - u) / sigma;
            prop_assert!(normal_cdf(lo) + normal_sf(hi) <= 1e-6 * (1.0 + 1e-9));
            prop_assert_eq!(t.frequencies().iter().sum::<u32>(), FREQ_TOTAL);
            prop_assert!(t.frequencies().iter().all(|&f| f >= 1));
        }
    }
}
