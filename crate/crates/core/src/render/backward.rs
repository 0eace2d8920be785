//! Reverse-mode derivatives of the compositing forward pass.
//!
//! The pass recomputes each pixel's front-to-back compositing in 64-bit,
//! walks the contributions back to front, and accumulates image-space
//! gradients per tile. Tiles are reduced in a fixed order, then every Gaussian
//! pushes its image-space gradients through the projection, the covariance
//! factorization and the colour model on its own.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::project::{prepare, Prepared, Splat};
use super::{check_frame, ALPHA_MAX, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::error::{Error, Result};
use crate::sh::{self, MAX_SH_COEFFS, SH_C0, SH_C1};
use crate::types::{Camera, Gaussian3D, GaussianCloud, Quat};

/// Partial derivatives of a scalar loss w.r.t. one Gaussian.
///
/// `d_log_scale` is taken through `scale = exp(log_scale)`, and `d_quat` is
/// the gradient w.r.t. the raw quaternion `q_raw` with `rotation =
/// q_raw / |q_raw|`, evaluated at `q_raw = rotation`. For a raw quaternion of
/// norm `n`, divide by `n` (the direction of the gradient is the same).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGrad {
    pub d_opacity: f64,
    pub d_mean: Vector3<f64>,
    pub d_log_scale: Vector3<f64>,
    pub d_quat: [f64; 4],
    d_sh: [f64; MAX_SH_COEFFS],
    k_c: usize,
}

impl GaussianGrad {
    pub fn zero(k_c: usize) -> Self {
        Self {
            d_opacity: 0.0,
            d_mean: Vector3::zeros(),
            d_log_scale: Vector3::zeros(),
            d_quat: [0.0; 4],
            d_sh: [0.0; MAX_SH_COEFFS],
            k_c,
        }
    }

    /// Gradient w.r.t. the flattened colour coefficients (layout of
    /// [`ShCoeffs::to_flat`](crate::sh::ShCoeffs::to_flat)).
    pub fn d_sh(&self) -> &[f64] {
        &self.d_sh[..self.k_c]
    }

    pub fn d_sh_mut(&mut self) -> &mut [f64] {
        &mut self.d_sh[..self.k_c]
    }

    pub fn is_finite(&self) -> bool {
        self.d_opacity.is_finite()
            && self.d_mean.iter().all(|v| v.is_finite())
            && self.d_log_scale.iter().all(|v| v.is_finite())
            && self.d_quat.iter().all(|v| v.is_finite())
            && self.d_sh().iter().all(|v| v.is_finite())
    }
}

/// One [`GaussianGrad`] per cloud member, in cloud order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grads: Vec<GaussianGrad>,
}

impl GradientBundle {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Image-space gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2D {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        for i in 0..2 {
            self.mean[i] += o.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

struct Contribution {
    local: usize,
    alpha: f64,
    gauss: f64,
    trans: f64,
    saturated: bool,
    dx: f64,
    dy: f64,
}

fn backward_tile(prep: &Prepared, tile: usize, cam: &Camera, upstream: &[f64]) -> Vec<Grad2D> {
    let list = &prep.tile_lists[tile];
    let mut grads = vec![Grad2D::default(); list.len()];
    if list.is_empty() {
        return grads;
    }
    let tx = tile % prep.tiles_x;
    let ty = tile / prep.tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(cam.width);
    let y1 = (y0 + TILE_SIZE).min(cam.height);
    let mut contribs: Vec<Contribution> = Vec::with_capacity(list.len());

    for y in y0..y1 {
        let py = y as f64 + 0.5;
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let pix = y * cam.width + x;
            let up = [upstream[pix * 3], upstream[pix * 3 + 1], upstream[pix * 3 + 2]];
            if up == [0.0; 3] {
                continue;
            }
            contribs.clear();
            let mut trans = 1.0f64;
            for (local, &k) in list.iter().enumerate() {
                let s = &prep.splats[k as usize];
                let dx = px - s.mean2d[0];
                let dy = py - s.mean2d[1];
                let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy)
                    - s.conic[1] * dx * dy;
                let gauss = power.exp();
                let raw_alpha = s.opacity * gauss;
                let alpha = raw_alpha.min(ALPHA_MAX);
                contribs.push(Contribution {
                    local,
                    alpha,
                    gauss,
                    trans,
                    saturated: raw_alpha > ALPHA_MAX,
                    dx,
                    dy,
                });
                trans *= 1.0 - alpha;
                if trans < TRANSMITTANCE_MIN {
                    break;
                }
            }

            // Colour accumulated behind the current contribution, projected on
            // the upstream gradient.
            let mut behind = 0.0;
            for c in contribs.iter().rev() {
                let s = &prep.splats[list[c.local] as usize];
                let g = &mut grads[c.local];
                let color_dot = s.color[0] * up[0] + s.color[1] * up[1] + s.color[2] * up[2];
                let weight = c.trans * c.alpha;
                for ch in 0..3 {
                    g.color[ch] += weight * up[ch];
                }
                let d_alpha = c.trans * color_dot - behind / (1.0 - c.alpha);
                behind += weight * color_dot;
                if c.saturated {
                    continue;
                }
                g.opacity += d_alpha * c.gauss;
                let d_power = d_alpha * s.opacity * c.gauss;
                let (a, b, cc) = (s.conic[0], s.conic[1], s.conic[2]);
                g.conic[0] += -0.5 * d_power * c.dx * c.dx;
                g.conic[1] += -d_power * c.dx * c.dy;
                g.conic[2] += -0.5 * d_power * c.dy * c.dy;
                g.mean[0] += d_power * (a * c.dx + b * c.dy);
                g.mean[1] += d_power * (b * c.dx + cc * c.dy);
            }
        }
    }
    grads
}

/// `dL/dq` for `R(q)` with `q` unit, given `dL/dR`.
fn quat_matrix_grad(q: &Quat, dr: &Matrix3<f64>) -> [f64; 4] {
    let Quat { w, x, y, z } = *q;
    let g = |r: usize, c: usize| dr[(r, c)];
    let dw = 2.0
        * (-g(0, 1) * z + g(0, 2) * y + g(1, 0) * z - g(1, 2) * x - g(2, 0) * y + g(2, 1) * x);
    let dx = 2.0
        * (g(0, 1) * y + g(0, 2) * z + g(1, 0) * y - 2.0 * g(1, 1) * x - g(1, 2) * w
            + g(2, 0) * z
            + g(2, 1) * w
            - 2.0 * g(2, 2) * x);
    let dy = 2.0
        * (-2.0 * g(0, 0) * y + g(0, 1) * x + g(0, 2) * w + g(1, 0) * x + g(1, 2) * z
            - g(2, 0) * w
            + g(2, 1) * z
            - 2.0 * g(2, 2) * y);
    let dz = 2.0
        * (-2.0 * g(0, 0) * z - g(0, 1) * w + g(0, 2) * x + g(1, 0) * w - 2.0 * g(1, 1) * z
            + g(1, 2) * y
            + g(2, 0) * x
            + g(2, 1) * y);
    [dw, dx, dy, dz]
}

fn chain_to_gaussian(g: &Gaussian3D, s: &Splat, d: &Grad2D, cam: &Camera) -> GaussianGrad {
    let mut out = GaussianGrad::zero(g.sh.len());
    out.d_opacity = d.opacity;

    // Colour clamp, then the SH model.
    let mut d_color = [0.0; 3];
    for ch in 0..3 {
        if s.color_raw[ch] > 0.0 && s.color_raw[ch] < 1.0 {
            d_color[ch] = d.color[ch];
        }
    }
    let mut d_mean = Vector3::zeros();
    {
        let d_sh = out.d_sh_mut();
        for ch in 0..3 {
            d_sh[ch] = SH_C0 * d_color[ch];
        }
        if let Some(lin) = &g.sh.linear {
            let y1 = sh::linear_basis(&s.view_dir);
            let mut e = [0.0; 3];
            for ch in 0..3 {
                for k in 0..3 {
                    d_sh[3 + ch * 3 + k] = d_color[ch] * y1[k];
                    e[k] += SH_C1 * d_color[ch] * lin[(ch, k)];
                }
            }
            // Y_1 reads (nu_y, nu_z, nu_x).
            let d_dir = Vector3::new(e[2], e[0], e[1]);
            let nu = &s.view_dir;
            d_mean += (d_dir - nu * nu.dot(&d_dir)) / s.view_dist;
        }
    }

    // Conic -> 2D covariance.
    let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(d.conic[0], 0.5 * d.conic[1], 0.5 * d.conic[1], d.conic[2]);
    let d_cov2d = -(conic * g_conic * conic);

    // 2D covariance -> camera covariance and Jacobian.
    let j = &s.jacobian;
    let d_cov_cam = j.transpose() * d_cov2d * j;
    let d_j = 2.0 * d_cov2d * j * s.cov_cam;

    // Camera covariance -> world covariance -> (scale, rotation).
    let w = &cam.world_to_cam.rotation;
    let d_sigma = w.transpose() * d_cov_cam * w;
    let scale_diag = Matrix3::from_diagonal(&g.scale);
    let m = s.rot * scale_diag;
    let d_m = 2.0 * d_sigma * m;
    for k in 0..3 {
        let d_s: f64 = (0..3).map(|r| d_m[(r, k)] * s.rot[(r, k)]).sum();
        out.d_log_scale[k] = d_s * g.scale[k];
    }
    let d_rot = d_m * scale_diag;
    let dq = quat_matrix_grad(&g.rotation, &d_rot);
    let q = g.rotation.to_array();
    let radial: f64 = (0..4).map(|i| q[i] * dq[i]).sum();
    for i in 0..4 {
        out.d_quat[i] = dq[i] - radial * q[i];
    }

    // Camera-space mean, through the projected centre and the Jacobian.
    let t = &s.t_cam;
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_t = Vector3::new(
        fx * iz * d.mean[0],
        fy * iz * d.mean[1],
        -fx * t.x * iz2 * d.mean[0] - fy * t.y * iz2 * d.mean[1],
    );
    d_t.x += d_j[(0, 2)] * (-fx * iz2);
    d_t.y += d_j[(1, 2)] * (-fy * iz2);
    d_t.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    d_mean += w.transpose() * d_t;
    out.d_mean = d_mean;
    out
}

/// Gradients of `sum_p upstream[p] . I[p]` w.r.t. every Gaussian of `cloud`,
/// where `I` is the 64-bit forward render. `upstream` is RGB, row-major,
/// interleaved. Culled Gaussians receive zero gradients.
pub fn rasterize_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    upstream: &[f64],
) -> Result<GradientBundle> {
    check_frame(cloud, cam)?;
    if upstream.len() != cam.width * cam.height * 3 {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient has {} values, expected {}",
            upstream.len(),
            cam.width * cam.height * 3
        )));
    }
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite upstream gradient"));
    }
    let prep = prepare(cloud, cam);
    let tile_grads: Vec<Vec<Grad2D>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|t| backward_tile(&prep, t, cam, upstream))
        .collect();

    let mut per_splat = vec![Grad2D::default(); prep.splats.len()];
    for (t, grads) in tile_grads.iter().enumerate() {
        for (local, &k) in prep.tile_lists[t].iter().enumerate() {
            per_splat[k as usize].add(&grads[local]);
        }
    }

    let mut grads: Vec<GaussianGrad> = cloud
        .gaussians
        .iter()
        .map(|g| GaussianGrad::zero(g.sh.len()))
        .collect();
    let chained: Vec<(usize, GaussianGrad)> = prep
        .splats
        .par_iter()
        .zip(per_splat.par_iter())
        .map(|(s, d)| (s.index, chain_to_gaussian(&cloud.gaussians[s.index], s, d, cam)))
        .collect();
    for (i, g) in chained {
        grads[i] = g;
    }
    Ok(GradientBundle { grads })
}
