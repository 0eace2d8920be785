//! Moving Gaussian mixtures between frames and merging them.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::{GaussianGrad, GradientBundle};
use crate::sh::{permutation, rotate_sh};
use crate::types::{FrameId, Gaussian3D, GaussianCloud, Quat, RigidTransform};

/// Apply `phi` to one Gaussian: the mean moves rigidly, the rotation is
/// composed on the left, and the colour coefficients turn with it. Opacity
/// and scale are untouched.
pub fn warp_gaussian(g: &Gaussian3D, phi: &RigidTransform) -> Gaussian3D {
    let p = Quat::from_matrix(&phi.rotation);
    Gaussian3D {
        opacity: g.opacity,
        mean: phi.apply(&g.mean),
        scale: g.scale,
        rotation: p.mul(g.rotation),
        sh: rotate_sh(&g.sh, &phi.rotation),
    }
}

pub fn warp_cloud(cloud: &GaussianCloud, phi: &RigidTransform, new_frame_id: FrameId) -> GaussianCloud {
    GaussianCloud::new(
        cloud.gaussians.par_iter().map(|g| warp_gaussian(g, phi)).collect(),
        new_frame_id,
    )
}

/// Concatenate clouds that live in the same frame.
pub fn union_clouds(clouds: &[GaussianCloud]) -> Result<GaussianCloud> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::invalid("union of zero clouds"))?;
    for c in &clouds[1..] {
        if c.frame_id != first.frame_id {
            return Err(Error::FrameMismatch {
                expected: first.frame_id.to_string(),
                found: c.frame_id.to_string(),
            });
        }
    }
    let gaussians = clouds.iter().flat_map(|c| c.gaussians.iter().cloned()).collect();
    Ok(GaussianCloud::new(gaussians, first.frame_id.clone()))
}

/// Left multiplication by `p` as a 4x4 matrix on `(w, x, y, z)`.
fn left_mul_matrix(p: Quat) -> [[f64; 4]; 4] {
    let Quat { w, x, y, z } = p;
    [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
}

/// Pull gradients taken with respect to a warped cloud back to the cloud
/// before the warp.
pub fn warp_backward(warped_grads: &GradientBundle, phi: &RigidTransform) -> GradientBundle {
    let r = phi.rotation;
    let lm = left_mul_matrix(Quat::from_matrix(&r));
    let p = permutation();
    let act_t: Matrix3<f64> = p * r * p.transpose();
    let grads = warped_grads
        .grads
        .iter()
        .map(|gw| {
            let k_c = gw.d_sh().len();
            let mut g = GaussianGrad::zero(k_c);
            g.d_opacity = gw.d_opacity;
            g.d_log_scale = gw.d_log_scale;
            g.d_mean = r.transpose() * gw.d_mean;
            for (i, out) in g.d_quat.iter_mut().enumerate() {
                *out = (0..4).map(|j| lm[j][i] * gw.d_quat[j]).sum();
            }
            let src = gw.d_sh();
            let dst = g.d_sh_mut();
            dst[..3].copy_from_slice(&src[..3]);
            if k_c > 3 {
                let d_lin_warped = Matrix3::from_row_slice(&src[3..12]);
                let d_lin = d_lin_warped * act_t;
                for c in 0..3 {
                    for j in 0..3 {
                        dst[3 + 3 * c + j] = d_lin[(c, j)];
                    }
                }
            }
            g
        })
        .collect();
    GradientBundle { grads }
}
