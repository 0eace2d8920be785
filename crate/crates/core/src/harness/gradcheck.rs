//! Analytic renderer gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{generate_cloud, orbit_camera};
use crate::error::Result;
use crate::render::{rasterize_backward, rasterize_f64, GaussianGrad};
use crate::sh::ShCoeffs;
use crate::types::{Camera, Gaussian3D, GaussianCloud, Quat};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub n_scenes: usize,
    pub n_gaussians: usize,
    pub image_size: usize,
    /// Finite-difference step, in each parameter's own units (log units for
    /// scales).
    pub step: f64,
    /// Parameters whose numerical derivative is smaller than this are not
    /// compared.
    pub min_magnitude: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n_scenes: 10,
            n_gaussians: 8,
            image_size: 32,
            step: 1e-4,
            min_magnitude: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Opacity,
    Mean(usize),
    LogScale(usize),
    Quat(usize),
    Sh(usize),
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamKind::Opacity => write!(f, "opacity"),
            ParamKind::Mean(k) => write!(f, "mean[{k}]"),
            ParamKind::LogScale(k) => write!(f, "log_scale[{k}]"),
            ParamKind::Quat(k) => write!(f, "quat[{k}]"),
            ParamKind::Sh(k) => write!(f, "sh[{k}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCheck {
    pub scene: usize,
    pub gaussian: usize,
    pub param: ParamKind,
    pub analytic: f64,
    pub numeric: f64,
}

impl ParamCheck {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.numeric.abs().max(self.analytic.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<ParamCheck>,
    pub min_magnitude: f64,
}

impl GradcheckReport {
    /// Checks whose numerical derivative is large enough to compare.
    pub fn compared(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks
            .iter()
            .filter(move |c| c.numeric.abs() > self.min_magnitude)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.compared().map(ParamCheck::rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.compared()
            .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }
}

fn params_of(g: &Gaussian3D) -> Vec<ParamKind> {
    let mut v = vec![ParamKind::Opacity];
    v.extend((0..3).map(ParamKind::Mean));
    v.extend((0..3).map(ParamKind::LogScale));
    v.extend((0..4).map(ParamKind::Quat));
    v.extend((0..g.sh.len()).map(ParamKind::Sh));
    v
}

fn perturbed(g: &Gaussian3D, p: ParamKind, delta: f64) -> Gaussian3D {
    let mut g = g.clone();
    match p {
        ParamKind::Opacity => g.opacity += delta,
        ParamKind::Mean(k) => g.mean[k] += delta,
        ParamKind::LogScale(k) => g.scale[k] *= delta.exp(),
        ParamKind::Quat(k) => {
            let mut q = g.rotation.to_array();
            q[k] += delta;
            g.rotation = Quat::from_array(q).expect("small step keeps the quaternion non-zero");
        }
        ParamKind::Sh(k) => {
            let mut flat = g.sh.to_vec();
            flat[k] += delta;
            g.sh = ShCoeffs::from_flat(&flat).expect("length unchanged");
        }
    }
    g
}

fn analytic_of(g: &GaussianGrad, p: ParamKind) -> f64 {
    match p {
        ParamKind::Opacity => g.d_opacity,
        ParamKind::Mean(k) => g.d_mean[k],
        ParamKind::LogScale(k) => g.d_log_scale[k],
        ParamKind::Quat(k) => g.d_quat[k],
        ParamKind::Sh(k) => g.d_sh()[k],
    }
}

/// Fourth-order central difference of `sum(weights * render)`, accumulated as
/// a sum of per-pixel differences so that unaffected pixels cancel exactly.
fn numeric_derivative(
    cloud: &GaussianCloud,
    cam: &Camera,
    weights: &[f64],
    index: usize,
    p: ParamKind,
    h: f64,
) -> Result<f64> {
    let render = |delta: f64| -> Result<Vec<f64>> {
        let mut c = cloud.clone();
        c.gaussians[index] = perturbed(&cloud.gaussians[index], p, delta);
        Ok(rasterize_f64(&c, cam)?.0)
    };
    let (p1, m1, p2, m2) = (render(h)?, render(-h)?, render(2.0 * h)?, render(-2.0 * h)?);
    let mut acc = 0.0;
    for i in 0..weights.len() {
        let d = 8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i]);
        acc += weights[i] * d;
    }
    Ok(acc / (12.0 * h))
}

/// Compare every parameter of every Gaussian of `cloud` for the loss
/// `sum(weights * render)`.
pub fn check_cloud(
    cloud: &GaussianCloud,
    cam: &Camera,
    weights: &[f64],
    step: f64,
    scene: usize,
) -> Result<Vec<ParamCheck>> {
    let grads = rasterize_backward(cloud, cam, weights)?;
    let mut out = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        for p in params_of(g) {
            out.push(ParamCheck {
                scene,
                gaussian: i,
                param: p,
                analytic: analytic_of(&grads.grads[i], p),
                numeric: numeric_derivative(cloud, cam, weights, i, p, step)?,
            });
        }
    }
    Ok(out)
}

/// Random procedural scenes seen by one camera each, with random per-pixel
/// loss weights.
pub fn run_gradcheck(seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for scene in 0..cfg.n_scenes {
        let cloud = generate_cloud(&mut rng, cfg.n_gaussians);
        let cam = orbit_camera(scene, rng.gen(), (cfg.image_size, cfg.image_size))?;
        let weights: Vec<f64> = (0..cfg.image_size * cfg.image_size * 3)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        checks.extend(check_cloud(&cloud, &cam, &weights, cfg.step, scene)?);
    }
    Ok(GradcheckReport {
        checks,
        min_magnitude: cfg.min_magnitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradcheck_passes() {
        let cfg = GradcheckConfig {
            n_scenes: 2,
            n_gaussians: 3,
            image_size: 16,
            ..GradcheckConfig::default()
        };
        let report = run_gradcheck(11, &cfg).unwrap();
        assert_eq!(report.checks.len(), 2 * 3 * 23);
        assert!(report.max_rel_error() <= 1e-3, "{:?}", report.worst());
    }
}
