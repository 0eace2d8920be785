//! Gaussians, rigid transforms, cameras and the mixture radiance field.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::{self, ShCoeffs};

/// Unit quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes `(w, x, y, z)`. Fails when the norm is below `1e-12` or the
    /// input is not finite.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let raw = [w, x, y, z];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite quaternion"));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateRotation { norm });
        }
        Ok(Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_matrix(self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Hamilton product `self * rhs`; `(p * q).to_matrix() == p.to_matrix() * q.to_matrix()`.
    pub fn mul(self, rhs: Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    /// Matrix-to-quaternion conversion. Picks the branch on the largest of the
    /// trace and the diagonal entries so the divisor never cancels.
    pub fn from_matrix(m: &Matrix3<f64>) -> Quat {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace >= m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
            let s = (1.0 + trace).sqrt() * 2.0;
            Quat {
                w: 0.25 * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: 0.25 * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: 0.25 * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        let n = q.norm();
        Quat {
            w: q.w / n,
            x: q.x / n,
            y: q.y / n,
            z: q.z / n,
        }
    }
}

/// `R(q) diag(scale)^2 R(q)^T`.
pub fn covariance_from(scale: &Vector3<f64>, rotation: &Quat) -> Result<Matrix3<f64>> {
    if scale.iter().any(|v| !v.is_finite()) || rotation.to_array().iter().any(|v| !v.is_finite())
    {
        return Err(Error::invalid("non-finite scale or rotation"));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("scale components must be positive"));
    }
    let r = rotation.to_matrix();
    let m = r * Matrix3::from_diagonal(scale);
    Ok(m * m.transpose())
}

/// One coloured anisotropic Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub opacity: f64,
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: Quat,
    pub sh: ShCoeffs,
}

impl Gaussian3D {
    pub fn new(
        opacity: f64,
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: Quat,
        sh: ShCoeffs,
    ) -> Result<Self> {
        let g = Self {
            opacity,
            mean,
            scale,
            rotation,
            sh,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::invalid(format!(
                "opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite mean"));
        }
        if self.scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "scale components must be positive and finite, got {:?}",
                self.scale.as_slice()
            )));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("rotation quaternion is not unit length"));
        }
        if !self.sh.is_finite() {
            return Err(Error::invalid("non-finite colour coefficients"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation.to_matrix() * Matrix3::from_diagonal(&self.scale);
        m * m.transpose()
    }

    /// `(x - mu)^T Sigma^{-1} (x - mu)` through the factorization: rotate the
    /// offset into the Gaussian's frame and divide by the scales.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &Vector3<f64>) -> f64 {
        let local = self.rotation.to_matrix().transpose() * (x - self.mean);
        let y = local.component_div(&self.scale);
        y.dot(&y)
    }
}

/// `exp(-1/2 (x - mu)^T Sigma^{-1} (x - mu))`.
pub fn eval_gaussian(g: &Gaussian3D, x: &Vector3<f64>) -> Result<f64> {
    if g
        .scale
        .iter()
        .any(|&s| !(s * s).is_normal() || !(1.0 / (s * s)).is_finite())
    {
        return Err(Error::Degenerate(format!(
            "covariance is singular for scale {:?}",
            g.scale.as_slice()
        )));
    }
    Ok((-0.5 * g.mahalanobis_sq(x)).exp())
}

/// Label of a coordinate frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameId(pub String);

impl FrameId {
    pub fn new(s: impl Into<String>) -> Self {
        FrameId(s.into())
    }

    pub fn world() -> Self {
        FrameId("world".to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Gaussians expressed in one coordinate frame. Order is significant: it
/// breaks depth ties when rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    pub frame_id: FrameId,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>, frame_id: FrameId) -> Self {
        Self {
            gaussians,
            frame_id,
        }
    }

    pub fn empty(frame_id: FrameId) -> Self {
        Self::new(Vec::new(), frame_id)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.gaussians.iter().try_for_each(Gaussian3D::validate)
    }
}

/// `x -> R x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub const ORTHO_TOLERANCE: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite rigid transform"));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err > Self::ORTHO_TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max deviation {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > Self::ORTHO_TOLERANCE {
            return Err(Error::invalid(format!("rotation determinant {det} != +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_quat(q: Quat, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_matrix(),
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 3x4 `[R | T]`.
    pub fn to_rows(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_rows(rows: &[f64; 12]) -> Result<Self> {
        let rot = Matrix3::from_fn(|r, c| rows[r * 4 + c]);
        let t = Vector3::new(rows[3], rows[7], rows[11]);
        Self::new(rot, t)
    }
}

/// Pinhole camera. `world_to_cam` maps points of frame `frame_id` into the
/// camera's own frame, which is labelled by `id`. The camera looks down +z,
/// with +x to the right and +y down the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: FrameId,
    pub frame_id: FrameId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_cam: RigidTransform,
    pub z_near: f64,
    pub z_far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: FrameId,
        frame_id: FrameId,
        (fx, fy): (f64, f64),
        (cx, cy): (f64, f64),
        (width, height): (usize, usize),
        world_to_cam: RigidTransform,
        (z_near, z_far): (f64, f64),
    ) -> Result<Self> {
        let cam = Self {
            id,
            frame_id,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_cam,
            z_near,
            z_far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("non-finite principal point"));
        }
        if !(self.z_near > 0.0 && self.z_near < self.z_far && self.z_far.is_finite()) {
            return Err(Error::invalid(format!(
                "depth range must satisfy 0 < z_near < z_far, got ({}, {})",
                self.z_near, self.z_far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1"));
        }
        Ok(())
    }

    /// Camera centre in the observed frame.
    pub fn center(&self) -> Vector3<f64> {
        -(self.world_to_cam.rotation.transpose() * self.world_to_cam.translation)
    }

    /// Ray `u = (u1, u2, 1)` through the centre of pixel `(row, col)`, in
    /// camera coordinates.
    #[inline]
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            (row as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// The same camera observing its own frame (identity pose).
    pub fn in_own_frame(&self) -> Camera {
        Camera {
            frame_id: self.id.clone(),
            world_to_cam: RigidTransform::identity(),
            ..self.clone()
        }
    }

    /// The camera `self ∘ phi`, observing the source frame of `phi`.
    pub fn precompose(&self, phi: &RigidTransform, source_frame: FrameId) -> Camera {
        Camera {
            frame_id: source_frame,
            world_to_cam: self.world_to_cam.compose(phi),
            ..self.clone()
        }
    }
}

/// Denominator guard of the mixture colour.
pub const FIELD_EPS: f64 = 1e-12;

/// Density and colour of the mixture field at `x` seen along `dir`.
///
/// `weights[i]` replaces the opacity of Gaussian `i` as its density weight.
/// Colours are evaluated per Gaussian and optionally clamped to `[0, 1]`
/// before mixing.
pub(crate) fn eval_field_weighted<'a>(
    gaussians: impl Iterator<Item = (&'a Gaussian3D, f64)>,
    x: &Vector3<f64>,
    dir: &Vector3<f64>,
    clamp_colors: bool,
) -> (f64, [f64; 3]) {
    let mut density = 0.0;
    let mut num = [0.0; 3];
    for (g, w) in gaussians {
        let d = w * (-0.5 * g.mahalanobis_sq(x)).exp();
        if d == 0.0 {
            continue;
        }
        let mut c = sh::eval_color(&g.sh, dir);
        if clamp_colors {
            c = c.map(|v| v.clamp(0.0, 1.0));
        }
        density += d;
        for ch in 0..3 {
            num[ch] += d * c[ch];
        }
    }
    if density <= FIELD_EPS {
        return (density, [0.0; 3]);
    }
    (density, num.map(|v| v / density))
}

/// The mixture radiance field: density `sum_i o_i g_i(x)` and the
/// density-weighted mean of the per-Gaussian colours (zero where the density
/// is below [`FIELD_EPS`]).
pub fn eval_field(
    cloud: &GaussianCloud,
    x: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<(f64, [f64; 3])> {
    if cloud.is_empty() {
        return Err(Error::invalid("field of an empty cloud"));
    }
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("viewing direction must be unit length"));
    }
    Ok(eval_field_weighted(
        cloud.gaussians.iter().map(|g| (g, g.opacity)),
        x,
        dir,
        false,
    ))
}
