use crate::error::{Error, Result};
use crate::harness::ssim_raw;
use crate::render::Image;

/// Weights and thresholds of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_big: f64,
    pub lambda_small: f64,
    /// Activated scales above this are penalized.
    pub s_big: f64,
    /// Raw log-scales below this are penalized.
    pub s_hat_small: f64,
    /// Mixing weight of an optional `1 - SSIM` term:
    /// `(1 - w) L2 + w (1 - SSIM)`. Zero disables it.
    pub ssim_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_big: 0.01,
            lambda_small: 0.01,
            s_big: 20.0,
            s_hat_small: -5.0,
            ssim_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_big >= 0.0 && self.lambda_small >= 0.0) {
            return Err(Error::invalid("regularizer weights must be non-negative"));
        }
        if !(self.s_big.is_finite() && self.s_hat_small.is_finite()) {
            return Err(Error::invalid("regularizer thresholds must be finite"));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::invalid("ssim_weight must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Mean squared error over all values and its gradient `2 (r - t) / N`.
pub fn l2_values(rendered: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if rendered.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rendered values vs {} target values",
            rendered.len(),
            target.len()
        )));
    }
    let n = rendered.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(&r, &t)| {
            let d = r - t;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, grad))
}

pub fn l2_loss(rendered: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    rendered.same_dims(target)?;
    let r: Vec<f64> = rendered.data().iter().map(|&v| f64::from(v)).collect();
    let t: Vec<f64> = target.data().iter().map(|&v| f64::from(v)).collect();
    l2_values(&r, &t)
}

/// Photometric term of the objective for one view: L2, optionally mixed with
/// `1 - SSIM`.
pub fn photometric_loss(
    rendered: &[f64],
    target: &[f64],
    dims: (usize, usize),
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let (l2, mut grad) = l2_values(rendered, target)?;
    let w = cfg.ssim_weight;
    if w == 0.0 {
        return Ok((l2, grad));
    }
    let (s, g_ssim) = ssim_raw(rendered, target, dims, true)?;
    let g_ssim = g_ssim.expect("gradient requested");
    for (g, gs) in grad.iter_mut().zip(&g_ssim) {
        *g = (1.0 - w) * *g - w * gs;
    }
    Ok(((1.0 - w) * l2 + w * (1.0 - s), grad))
}

/// Mean of the activated scales exceeding `s_big`; zero when none do.
pub fn reg_big(activated_scales: &[f64], s_big: f64) -> f64 {
    reg_big_grad(activated_scales, s_big).0
}

/// [`reg_big`] and its gradient, which is `1 / count` on offending entries.
pub fn reg_big_grad(activated_scales: &[f64], s_big: f64) -> (f64, Vec<f64>) {
    let offending: Vec<usize> = (0..activated_scales.len())
        .filter(|&i| activated_scales[i] > s_big)
        .collect();
    let mut grad = vec![0.0; activated_scales.len()];
    if offending.is_empty() {
        return (0.0, grad);
    }
    let n = offending.len() as f64;
    let sum: f64 = offending.iter().map(|&i| activated_scales[i]).sum();
    for &i in &offending {
        grad[i] = 1.0 / n;
    }
    (sum / n, grad)
}

/// Mean of `-s` over raw log-scales below `s_hat_small`; zero when none are.
pub fn reg_small(raw_log_scales: &[f64], s_hat_small: f64) -> f64 {
    reg_small_grad(raw_log_scales, s_hat_small).0
}

pub fn reg_small_grad(raw_log_scales: &[f64], s_hat_small: f64) -> (f64, Vec<f64>) {
    let offending: Vec<usize> = (0..raw_log_scales.len())
        .filter(|&i| raw_log_scales[i] < s_hat_small)
        .collect();
    let mut grad = vec![0.0; raw_log_scales.len()];
    if offending.is_empty() {
        return (0.0, grad);
    }
    let n = offending.len() as f64;
    let sum: f64 = offending.iter().map(|&i| -raw_log_scales[i]).sum();
    for &i in &offending {
        grad[i] = -1.0 / n;
    }
    (sum / n, grad)
}
