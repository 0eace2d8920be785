//! Training the predictor across scenes: each scene's first view is the
//! network input, its other views are render targets.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, OptimState};
use super::loss::LossConfig;
use super::net::{predictor_forward, PredictorNet};
use super::objective::{splatter_objective, GridSpec};
use crate::error::{Error, Result};
use crate::fusion::warp_cloud;
use crate::harness::{mean_image, psnr, Scene, View};
use crate::render::{rasterize, Image};
use crate::splatter::unpack;
use crate::types::GaussianCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Target views per iteration.
    pub targets_per_step: usize,
    /// Seeds scene order and target choice.
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            adam: AdamConfig::with_lr(1e-3),
            targets_per_step: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorResult {
    pub net: PredictorNet,
    /// Loss of every iteration, one iteration per scene per epoch.
    pub loss_trace: Vec<f64>,
}

/// Grid shape the net produces for a source view; the depth range is the one
/// a stored splatter image would carry.
fn source_spec(net: &PredictorNet, source: &View) -> GridSpec {
    let cam = &source.camera;
    GridSpec {
        height: cam.height,
        width: cam.width,
        k_c: net.k_c(),
        z_near: f64::from(cam.z_near as f32),
        z_far: f64::from(cam.z_far as f32),
    }
}

pub fn train_predictor(
    scenes: &[Scene],
    net: &PredictorNet,
    epochs: usize,
    cfg: &PredictorConfig,
) -> Result<PredictorResult> {
    cfg.loss.validate()?;
    if cfg.targets_per_step == 0 {
        return Err(Error::invalid("targets_per_step must be positive"));
    }
    if let Some(s) = scenes.iter().find(|s| s.views.len() < 2) {
        return Err(Error::invalid(format!("scene {} has fewer than two views", s.seed)));
    }
    let mut net = net.clone();
    let mut params = net.params();
    let mut state = OptimState::new(params.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut trace = Vec::with_capacity(epochs * scenes.len());
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &s in &order {
            let views = &scenes[s].views;
            let source = &views[0];
            let k = cfg.targets_per_step.min(views.len() - 1);
            let mut picked = sample(&mut rng, views.len() - 1, k).into_vec();
            picked.sort_unstable();
            let targets: Vec<&View> = picked.iter().map(|&i| &views[i + 1]).collect();

            let forward = net.forward_trace(&source.image);
            let raw = forward.output();
            let spec = source_spec(&net, source);
            let (loss, d_raw) = splatter_objective(&raw, &spec, &source.camera, &targets, &cfg.loss)?;
            let grad = net.backward(&forward, &d_raw)?;
            adam_step(&mut state, &mut params, &grad)?;
            net.set_params(&params)?;
            trace.push(loss);
        }
        log::debug!(
            "epoch {epoch}: mean loss {:.6}",
            trace[trace.len() - scenes.len()..].iter().sum::<f64>() / scenes.len().max(1) as f64
        );
    }
    Ok(PredictorResult {
        net,
        loss_trace: trace,
    })
}

/// World-frame cloud predicted from a single view.
pub fn predict_cloud(net: &PredictorNet, source: &View) -> Result<GaussianCloud> {
    let cam = &source.camera;
    let m = predictor_forward(net, &source.image, (cam.z_near, cam.z_far))?;
    let local = unpack(&m, cam)?;
    Ok(warp_cloud(&local, &cam.world_to_cam.inverse(), cam.frame_id.clone()))
}

/// Mean PSNR over every non-source view of `scenes`, rendering the cloud
/// predicted from each scene's first view.
pub fn predictor_psnr(net: &PredictorNet, scenes: &[Scene]) -> Result<f64> {
    let mut values = Vec::new();
    for scene in scenes {
        let cloud = predict_cloud(net, &scene.views[0])?;
        for view in &scene.views[1..] {
            let (img, _) = rasterize(&cloud, &view.camera)?;
            values.push(psnr(&img, &view.image)?);
        }
    }
    mean_of(values)
}

/// Mean PSNR of the per-pixel mean of every image in `train` against the same
/// views [`predictor_psnr`] scores.
pub fn mean_image_psnr(train: &[Scene], test: &[Scene]) -> Result<f64> {
    let images: Vec<&Image> = train.iter().flat_map(|s| s.views.iter().map(|v| &v.image)).collect();
    let baseline = mean_image(&images)?;
    let mut values = Vec::new();
    for scene in test {
        for view in &scene.views[1..] {
            values.push(psnr(&baseline, &view.image)?);
        }
    }
    mean_of(values)
}

fn mean_of(values: Vec<f64>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("no target views to score"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
