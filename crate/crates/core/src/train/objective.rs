//! Loss and raw-parameter gradient of a splatter image against target views.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::loss::{photometric_loss, reg_big_grad, reg_small_grad, LossConfig};
use crate::error::{Error, Result};
use crate::fusion::{warp_backward, warp_cloud};
use crate::harness::View;
use crate::render::{rasterize_backward, rasterize_f64, GaussianGrad, GradientBundle};
use crate::splatter::{
    channel_count, sigmoid, unpack_params, CH_DEPTH, CH_LOG_SCALE, CH_OFFSET, CH_OPACITY, CH_QUAT,
    CH_SH,
};
use crate::types::Camera;

/// Pull a Gaussian's gradient back through the pixel activation into the raw
/// parameters `raw`, writing into `out` (same layout).
pub fn activation_backward(
    raw: &[f64],
    ray: &Vector3<f64>,
    (z_near, z_far): (f64, f64),
    grad: &GaussianGrad,
    out: &mut [f64],
) {
    let o = sigmoid(raw[CH_OPACITY]);
    out[CH_OPACITY] = grad.d_opacity * o * (1.0 - o);
    for k in 0..3 {
        out[CH_OFFSET + k] = grad.d_mean[k];
        out[CH_LOG_SCALE + k] = grad.d_log_scale[k];
    }
    let s = sigmoid(raw[CH_DEPTH]);
    let d_depth = ray.dot(&grad.d_mean);
    out[CH_DEPTH] = d_depth * (z_far - z_near) * s * (1.0 - s);
    let q = &raw[CH_QUAT..CH_QUAT + 4];
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    for k in 0..4 {
        out[CH_QUAT + k] = grad.d_quat[k] / norm;
    }
    out[CH_SH..].copy_from_slice(grad.d_sh());
}

/// Shape of a raw parameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub k_c: usize,
    pub z_near: f64,
    pub z_far: f64,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.height * self.width * channel_count(self.k_c)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn add_bundle(acc: &mut GradientBundle, other: &GradientBundle) {
    for (a, b) in acc.grads.iter_mut().zip(&other.grads) {
        a.d_opacity += b.d_opacity;
        a.d_mean += b.d_mean;
        a.d_log_scale += b.d_log_scale;
        for k in 0..4 {
            a.d_quat[k] += b.d_quat[k];
        }
        for (x, y) in a.d_sh_mut().iter_mut().zip(b.d_sh()) {
            *x += y;
        }
    }
}

/// Total objective of a raw grid predicted from `ref_cam`, rendered into each
/// target view: mean photometric loss plus the weighted scale regularizers.
/// Returns the loss and its gradient with respect to `params`.
pub fn splatter_objective(
    params: &[f64],
    spec: &GridSpec,
    ref_cam: &Camera,
    targets: &[&View],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::invalid("at least one target view is required"));
    }
    let local = unpack_params(
        params,
        (spec.height, spec.width, spec.k_c),
        (spec.z_near, spec.z_far),
        ref_cam,
    )?;
    let phi = ref_cam.world_to_cam.inverse();
    let cloud = warp_cloud(&local, &phi, ref_cam.frame_id.clone());
    let n_views = targets.len() as f64;

    let per_view: Vec<(f64, GradientBundle)> = targets
        .par_iter()
        .map(|view| {
            let cam = &view.camera;
            let (rgb, _) = rasterize_f64(&cloud, cam)?;
            let target: Vec<f64> = view.image.data().iter().map(|&v| f64::from(v)).collect();
            let (loss, mut upstream) = photometric_loss(&rgb, &target, (cam.height, cam.width), cfg)?;
            upstream.iter_mut().for_each(|g| *g /= n_views);
            Ok((loss / n_views, rasterize_backward(&cloud, cam, &upstream)?))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut world_grads = GradientBundle {
        grads: vec![GaussianGrad::zero(spec.k_c); cloud.len()],
    };
    for (loss, bundle) in &per_view {
        total += loss;
        add_bundle(&mut world_grads, bundle);
    }
    let local_grads = warp_backward(&world_grads, &phi);

    let c = channel_count(spec.k_c);
    let mut d_params = vec![0.0; params.len()];
    for row in 0..spec.height {
        for col in 0..spec.width {
            let i = row * spec.width + col;
            activation_backward(
                &params[i * c..(i + 1) * c],
                &ref_cam.pixel_ray(row, col),
                (spec.z_near, spec.z_far),
                &local_grads.grads[i],
                &mut d_params[i * c..(i + 1) * c],
            );
        }
    }

    let n_pix = spec.height * spec.width;
    let log_scales: Vec<f64> = (0..n_pix * 3)
        .map(|j| params[(j / 3) * c + CH_LOG_SCALE + j % 3])
        .collect();
    if cfg.lambda_big > 0.0 {
        let scales: Vec<f64> = log_scales.iter().map(|v| v.exp()).collect();
        let (l, g) = reg_big_grad(&scales, cfg.s_big);
        total += cfg.lambda_big * l;
        for (j, gj) in g.iter().enumerate() {
            if *gj != 0.0 {
                d_params[(j / 3) * c + CH_LOG_SCALE + j % 3] += cfg.lambda_big * gj * scales[j];
            }
        }
    }
    if cfg.lambda_small > 0.0 {
        let (l, g) = reg_small_grad(&log_scales, cfg.s_hat_small);
        total += cfg.lambda_small * l;
        for (j, gj) in g.iter().enumerate() {
            if *gj != 0.0 {
                d_params[(j / 3) * c + CH_LOG_SCALE + j % 3] += cfg.lambda_small * gj;
            }
        }
    }
    Ok((total, d_params))
}
