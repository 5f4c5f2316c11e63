//! Clipping, Gaussian noise calibration and masking.
//!
//! Each client adds `N(0, sigma2 / rho)` noise to its clipped gradient, so
//! a sum of `rho` updates carries `N(0, sigma2)`. `sigma2` is sized for a
//! per-client inclusion bound `T` via the closed-form Gaussian RDP curve
//! `eps(alpha) = T C^2 alpha / (2 sigma2)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::field::{FieldError, FieldVec, FixedPointCodec, PublicMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DpError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("no order on the grid reaches epsilon {0} at this delta")]
    Infeasible(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub epsilon_max: f64,
    pub alpha: f64,
    pub clip: f64,
    pub inclusion_bound: u64,
    pub rho: usize,
    pub sigma2: f64,
    pub delta: f64,
    pub tau_max: u64,
    pub delta_max_inclusion: u64,
}

/// `T = ceil(tau_max rho / k) + delta_max`.
pub fn inclusion_bound(tau_max: u64, rho: usize, k: usize, delta_max: u64) -> u64 {
    (tau_max * rho as u64).div_ceil(k as u64) + delta_max
}

impl DpConfig {
    /// Fixes `alpha` and `epsilon_max` directly (RDP budget).
    pub fn from_rdp(
        epsilon_max: f64,
        alpha: f64,
        clip: f64,
        tau_max: u64,
        rho: usize,
        k: usize,
        delta_max_inclusion: u64,
    ) -> Result<Self, DpError> {
        if rho >= k {
            return Err(DpError::BadParams(format!("rho {rho} must be below k {k}")));
        }
        let t = inclusion_bound(tau_max, rho, k, delta_max_inclusion);
        let sigma2 = calibrate_sigma2(t, clip, alpha, epsilon_max)?;
        Ok(DpConfig {
            epsilon_max,
            alpha,
            clip,
            inclusion_bound: t,
            rho,
            sigma2,
            delta: 0.0,
            tau_max,
            delta_max_inclusion,
        })
    }

    /// Targets `(epsilon, delta)`-DP, choosing the best order on the grid.
    pub fn from_dp(
        epsilon: f64,
        delta: f64,
        clip: f64,
        tau_max: u64,
        rho: usize,
        k: usize,
        delta_max_inclusion: u64,
    ) -> Result<Self, DpError> {
        if rho >= k {
            return Err(DpError::BadParams(format!("rho {rho} must be below k {k}")));
        }
        let t = inclusion_bound(tau_max, rho, k, delta_max_inclusion);
        let (alpha, sigma2) = dp_from_rdp(epsilon, delta, t, clip)?;
        Ok(DpConfig {
            epsilon_max: rdp_epsilon(alpha, t, sigma2, clip),
            alpha,
            clip,
            inclusion_bound: t,
            rho,
            sigma2,
            delta,
            tau_max,
            delta_max_inclusion,
        })
    }

    /// No noise at all; for oracle comparisons.
    pub fn disabled(clip: f64, rho: usize) -> Self {
        DpConfig {
            epsilon_max: f64::INFINITY,
            alpha: 2.0,
            clip,
            inclusion_bound: u64::MAX,
            rho,
            sigma2: 0.0,
            delta: 0.0,
            tau_max: 0,
            delta_max_inclusion: 0,
        }
    }
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `g / max(1, |g| / C)`.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let factor = (l2_norm(g) / c).max(1.0);
    g.iter().map(|v| v / factor).collect()
}

pub fn calibrate_sigma2(t: u64, clip: f64, alpha: f64, epsilon_max: f64) -> Result<f64, DpError> {
    if t == 0 || !(clip > 0.0) || !(alpha > 1.0) || !(epsilon_max > 0.0) {
        return Err(DpError::BadParams(format!(
            "need T > 0, C > 0, alpha > 1, epsilon > 0 (got {t}, {clip}, {alpha}, {epsilon_max})"
        )));
    }
    Ok(t as f64 * clip * clip * alpha / (2.0 * epsilon_max))
}

pub fn rdp_epsilon(alpha: f64, t: u64, sigma2: f64, clip: f64) -> f64 {
    t as f64 * clip * clip * alpha / (2.0 * sigma2)
}

/// Standard RDP to approximate-DP conversion.
pub fn dp_epsilon(alpha: f64, t: u64, sigma2: f64, clip: f64, delta: f64) -> f64 {
    rdp_epsilon(alpha, t, sigma2, clip) + (1.0 / delta).ln() / (alpha - 1.0)
}

/// Orders searched by [`dp_from_rdp`]: 1.25 to 64 in steps of 0.25, then
/// every integer up to 256.
pub fn alpha_grid() -> Vec<f64> {
    (5..=256).map(|i| i as f64 * 0.25).chain((65..=256).map(|i| i as f64)).collect()
}

/// Smallest noise variance reaching `(target, delta)`-DP after `T`
/// releases, with the order that achieves it.
pub fn dp_from_rdp(target: f64, delta: f64, t: u64, clip: f64) -> Result<(f64, f64), DpError> {
    if !(delta > 0.0 && delta < 1.0) || !(target > 0.0) || t == 0 || !(clip > 0.0) {
        return Err(DpError::BadParams(format!("target {target}, delta {delta}")));
    }
    let log_term = (1.0 / delta).ln();
    alpha_grid()
        .into_iter()
        .filter_map(|alpha| {
            let eps_rdp = target - log_term / (alpha - 1.0);
            if eps_rdp <= 0.0 {
                return None;
            }
            calibrate_sigma2(t, clip, alpha, eps_rdp).ok().map(|s| (alpha, s))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(DpError::Infeasible(target))
}

/// I.i.d. `N(0, sigma2 / rho)` coordinates.
pub fn draw_noise<R: Rng + ?Sized>(sigma2: f64, rho: usize, dim: usize, rng: &mut R) -> Vec<f64> {
    if sigma2 == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, (sigma2 / rho as f64).sqrt()).expect("finite positive std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

/// `clip(g) + e`, resampling any coordinate whose sum would leave the
/// codec's range.
pub fn noisy_clipped<R: Rng + ?Sized>(
    g: &[f64],
    cfg: &DpConfig,
    codec: &FixedPointCodec,
    rng: &mut R,
) -> Vec<f64> {
    let clipped = clip(g, cfg.clip);
    let limit = codec.max_magnitude();
    let std = (cfg.sigma2 / cfg.rho as f64).sqrt();
    if std == 0.0 {
        return clipped;
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    clipped
        .iter()
        .map(|&x| loop {
            let v = x + normal.sample(rng);
            if v.abs() <= limit {
                break v;
            }
        })
        .collect()
}

/// `h = encode(g + e) + A s`.
pub fn mask_update(
    noisy: &[f64],
    s: &FieldVec,
    a: &PublicMatrix,
    codec: &FixedPointCodec,
) -> Result<FieldVec, DpError> {
    let enc = codec.encode(noisy)?;
    let mask = a.mat_vec_mul(s)?;
    Ok(codec.field().vec_add(&enc, &mask)?)
}

/// `H - A s_hat`, still encoded.
pub fn unmask_encoded(h_hat: &FieldVec, s_hat: &FieldVec, a: &PublicMatrix, codec: &FixedPointCodec) -> Result<FieldVec, DpError> {
    let mask = a.mat_vec_mul(s_hat)?;
    Ok(codec.field().vec_sub(h_hat, &mask)?)
}

/// Decodes `H - A s_hat` as a sum of `rho` updates.
pub fn unmask(
    h_hat: &FieldVec,
    s_hat: &FieldVec,
    a: &PublicMatrix,
    codec: &FixedPointCodec,
    rho: usize,
) -> Result<Vec<f64>, DpError> {
    let g = unmask_encoded(h_hat, s_hat, a, codec)?;
    Ok(codec.decode_sum(&g, rho as u64)?)
}
