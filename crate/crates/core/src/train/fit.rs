use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, OptimState};
use super::loss::LossConfig;
use super::objective::{splatter_objective, GridSpec};
use crate::error::{Error, Result};
use crate::harness::View;
use crate::sh::SH_C0;
use crate::splatter::{channel_count, SplatterImage, CH_LOG_SCALE, CH_QUAT, CH_SH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Target views rendered per step; 0 renders every view.
    pub views_per_step: usize,
    /// Seeds the choice of views at each step.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            adam: AdamConfig::with_lr(0.01),
            views_per_step: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub splatter: SplatterImage,
    /// Total loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Raw values of one pixel before any training: half opacity, mid depth, no
/// offset, identity rotation, mid-grey colour and a scale of about a pixel at
/// mid depth.
pub fn initial_pixel(k_c: usize, height: usize, width: usize, (z_near, z_far): (f64, f64)) -> Vec<f64> {
    let mut raw = vec![0.0; channel_count(k_c)];
    let log_scale = (2.0 * (z_far - z_near) / height.max(width) as f64).ln();
    raw[CH_LOG_SCALE..CH_LOG_SCALE + 3].fill(log_scale);
    raw[CH_QUAT] = 1.0;
    raw[CH_SH..CH_SH + 3].fill(0.5 / SH_C0);
    raw
}

pub fn initial_splatter(
    height: usize,
    width: usize,
    k_c: usize,
    depth_range: (f64, f64),
) -> Result<SplatterImage> {
    let pixel = initial_pixel(k_c, height, width, depth_range);
    let data: Vec<f64> = (0..height * width).flat_map(|_| pixel.iter().copied()).collect();
    SplatterImage::from_f64(height, width, k_c, &data, depth_range)
}

pub(crate) fn grid_spec(m: &SplatterImage) -> GridSpec {
    let (zn, zf) = m.depth_range();
    GridSpec {
        height: m.height(),
        width: m.width(),
        k_c: m.k_c(),
        z_near: f64::from(zn),
        z_far: f64::from(zf),
    }
}

/// Optimize a splatter image predicted from the camera of `views[0]` against
/// all of `views`.
pub fn fit_splatter(
    views: &[View],
    init: &SplatterImage,
    steps: usize,
    cfg: &FitConfig,
) -> Result<FitResult> {
    if views.len() < 2 {
        return Err(Error::invalid("fitting needs at least two views"));
    }
    cfg.loss.validate()?;
    let ref_cam = &views[0].camera;
    if ref_cam.height != init.height() || ref_cam.width != init.width() {
        return Err(Error::DimensionMismatch(format!(
            "reference camera is {}x{}, splatter image is {}x{}",
            ref_cam.height,
            ref_cam.width,
            init.height(),
            init.width()
        )));
    }
    let spec = grid_spec(init);
    let mut params = init.to_f64();
    let mut state = OptimState::new(params.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_step = match cfg.views_per_step {
        0 => views.len(),
        k => k.min(views.len()),
    };
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut picked = sample(&mut rng, views.len(), per_step).into_vec();
        picked.sort_unstable();
        let targets: Vec<&View> = picked.iter().map(|&i| &views[i]).collect();
        let (loss, grad) = splatter_objective(&params, &spec, ref_cam, &targets, &cfg.loss)?;
        adam_step(&mut state, &mut params, &grad)?;
        log::debug!("fit step {step}: loss {loss:.6}");
        trace.push(loss);
    }
    let splatter = if steps == 0 {
        init.clone()
    } else {
        SplatterImage::from_f64(
            spec.height,
            spec.width,
            spec.k_c,
            &params,
            (spec.z_near, spec.z_far),
        )?
    };
    Ok(FitResult {
        splatter,
        loss_trace: trace,
    })
}
