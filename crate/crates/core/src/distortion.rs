//! End-to-end distortion: the channel-distortion approximation, the upper
//! bound and its rate form, Lipschitz constants of linear decoders, C̃
//! calibration and the variance audit.
//!
//! Variances and Lipschitz constants in the bounds are in quantizer-step units
//! (features divided by Δ), so the quantization noise is always 1/12; C̃ in the
//! working approximation absorbs the resulting Δ² factor.

use nalgebra::DMatrix;
use std::f64::consts::{E, PI};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistortionError {
    #[error("C̃ calibration is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Predicted distortion of one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionBreakdown {
    pub d_s: f64,
    pub d_c: f64,
    pub d_hat_t: f64,
    /// Expected packet count R_s / (L R_c).
    pub t_tilde: f64,
    pub rho: f64,
}

/// 1 − (1 − ρ)^T, evaluated without cancellation.
pub fn loss_probability(rho: f64, t: f64) -> f64 {
    if t <= 0.0 || rho <= 0.0 {
        return 0.0;
    }
    if rho >= 1.0 {
        return 1.0;
    }
    -(t * (-rho).ln_1p()).exp_m1()
}

/// 2^(2R/K) / (2πe) + 1/12: per-element signal-plus-noise scale used by the approximation.
pub fn rate_scale(k: usize, r_s: f64) -> f64 {
    (2.0 * r_s / k as f64).exp2() / (2.0 * PI * E) + 1.0 / 12.0
}

/// D_c = (K/M)(1 − (1−ρ)^T̃) C̃ (2^(2R_s/K)/(2πe) + 1/12).
pub fn channel_distortion(k: usize, m: usize, rho: f64, t_tilde: f64, c_tilde: f64, r_s: f64) -> f64 {
    k as f64 / m as f64 * loss_probability(rho, t_tilde) * c_tilde * rate_scale(k, r_s)
}

impl DistortionBreakdown {
    pub fn new(k: usize, m: usize, d_s: f64, r_s: f64, rho: f64, t_tilde: f64, c_tilde: f64) -> Self {
        let d_c = channel_distortion(k, m, rho, t_tilde, c_tilde, r_s);
        Self { d_s, d_c, d_hat_t: d_s + d_c, t_tilde, rho }
    }
}

/// Inputs of the distortion upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Diagonal of Σ̄ in step units.
    pub variances: Vec<f64>,
    /// Lipschitz constant of the recovery map in step units.
    pub c_psi: f64,
    pub alpha_tilde: f64,
    pub k: usize,
    pub m: usize,
}

impl BoundInputs {
    /// Converts feature-unit variances and a feature-unit Lipschitz constant `c_w`.
    pub fn from_feature_units(variances: &[f64], delta: f64, c_w: f64, alpha_tilde: f64, m: usize) -> Self {
        let d2 = delta * delta;
        Self {
            variances: variances.iter().map(|v| v / d2).collect(),
            c_psi: c_w * d2,
            alpha_tilde,
            k: variances.len(),
            m,
        }
    }

    pub fn validate(&self) -> Result<(), DistortionError> {
        if self.variances.iter().any(|&v| !(v >= 0.0)) {
            return Err(DistortionError::InvalidParameter { name: "variance", value: f64::NAN });
        }
        if !(self.c_psi >= 0.0) {
            return Err(DistortionError::InvalidParameter { name: "c_psi", value: self.c_psi });
        }
        if !(self.alpha_tilde > 1.0) {
            return Err(DistortionError::InvalidParameter { name: "alpha_tilde", value: self.alpha_tilde });
        }
        Ok(())
    }

    /// Tr(Σ̄ + I/12).
    pub fn trace(&self) -> f64 {
        self.variances.iter().sum::<f64>() + self.variances.len() as f64 / 12.0
    }
}

/// D̃_t = (1 − (1−ρ)^T̃)(C_ψ/M)(α̃ − 1) Tr(Σ̄ + I/12) + D_s.
pub fn distortion_bound(inputs: &BoundInputs, rho: f64, t_tilde: f64, d_s: f64) -> f64 {
    loss_probability(rho, t_tilde) * inputs.c_psi / inputs.m as f64 * (inputs.alpha_tilde - 1.0) * inputs.trace() + d_s
}

/// [`distortion_bound`] with Tr(Σ̄) replaced by its rate bound K 2^(2R_s/K)/(2πe).
pub fn rate_distortion_bound(inputs: &BoundInputs, r_s: f64, rho: f64, t_tilde: f64, d_s: f64) -> f64 {
    let k = inputs.k;
    loss_probability(rho, t_tilde) * inputs.c_psi / inputs.m as f64
        * (inputs.alpha_tilde - 1.0)
        * k as f64
        * rate_scale(k, r_s)
        + d_s
}

/// K 2^(2R/K) / (2πe), the rate bound on Tr(Σ̄) in step units.
pub fn trace_bound(k: usize, r_s: f64) -> f64 {
    k as f64 * (2.0 * r_s / k as f64).exp2() / (2.0 * PI * E)
}

/// Largest squared singular value of W.
pub fn lipschitz_linear(w: &DMatrix<f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let s = w.clone().svd(false, false).singular_values;
    let top = s.iter().cloned().fold(0.0, f64::max);
    top * top
}

/// One point of a bit-flip sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub rho_b: f64,
    pub mse: f64,
}

/// Operating point the sweep was run at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub k: usize,
    pub m: usize,
    pub d_s: f64,
    pub r_s: f64,
    /// Bits per packet N used to map ρ_b to ρ and to count T̃ = R_s / N.
    pub packet_bits: usize,
}

impl CalibrationModel {
    /// Channel distortion per unit C̃ at bit-flip probability `rho_b`.
    pub fn unit_distortion(&self, rho_b: f64) -> f64 {
        let rho = crate::channel::packet_error_from_bits(rho_b, self.packet_bits);
        channel_distortion(self.k, self.m, rho, self.r_s / self.packet_bits as f64, 1.0, self.r_s)
    }

    /// D̂_t predicted at `rho_b` for a given C̃.
    pub fn predict(&self, rho_b: f64, c_tilde: f64) -> f64 {
        self.d_s + c_tilde * self.unit_distortion(rho_b)
    }
}

/// Fits C̃ so D_s + C̃ g(ρ_b) tracks the observed MSE, minimizing relative squared residuals.
pub fn estimate_c_tilde(obs: &[CalibrationPoint], model: &CalibrationModel) -> Result<f64, DistortionError> {
    if obs.len() < 3 {
        return Err(DistortionError::IllConditioned(format!("{} observations, need 3", obs.len())));
    }
    let lo = obs.iter().map(|o| o.rho_b).fold(f64::INFINITY, f64::min);
    let hi = obs.iter().map(|o| o.rho_b).fold(0.0, f64::max);
    if !(lo > 0.0 && hi / lo >= 10.0 * (1.0 - 1e-9)) {
        return Err(DistortionError::IllConditioned("rho_b spans less than a decade".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    let mut excess = 0.0f64;
    for o in obs {
        if !(o.mse > 0.0 && o.mse.is_finite()) {
            return Err(DistortionError::IllConditioned(format!("observed MSE {}", o.mse)));
        }
        let g = model.unit_distortion(o.rho_b);
        let w = 1.0 / (o.mse * o.mse);
        num += w * g * (o.mse - model.d_s);
        den += w * g * g;
        excess = excess.max((o.mse - model.d_s) / o.mse);
    }
    if den <= 0.0 || excess < 1e-9 {
        return Err(DistortionError::IllConditioned("no measurable channel distortion".into()));
    }
    let c = num / den;
    if !(c > 0.0 && c.is_finite()) {
        return Err(DistortionError::IllConditioned(format!("fitted C̃ = {c}")));
    }
    Ok(c)
}

/// Output of [`variance_audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceAudit {
    /// Var(ŷ_i) / (σ̄_i² + Δ²/12) per element.
    pub factors: Vec<f64>,
    pub max_factor: f64,
}

/// Compares the empirical variance of reconstructed features against σ̄² + Δ²/12.
pub fn variance_audit(y_hat: &[Vec<f64>], sigma_bar_sq: &[f64], delta: f64) -> Result<VarianceAudit, DistortionError> {
    if y_hat.len() < 2 {
        return Err(DistortionError::EmptyBatch);
    }
    let k = sigma_bar_sq.len();
    if let Some(row) = y_hat.iter().find(|r| r.len() != k) {
        return Err(DistortionError::LengthMismatch(row.len(), k));
    }
    let n = y_hat.len() as f64;
    let mut mean = vec![0.0; k];
    for row in y_hat {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for row in y_hat {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let noise = delta * delta / 12.0;
    let factors: Vec<f64> = var.iter().zip(sigma_bar_sq).map(|(s, sb)| s / (n - 1.0) / (sb + noise)).collect();
    let max_factor = factors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(VarianceAudit { factors, max_factor })
}
