use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{COV2D_DILATION, FOOTPRINT_SIGMAS, TILE_SIZE};
use crate::sh;
use crate::types::{Camera, Gaussian3D, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel coordinates; pixel `(row, col)` has its centre at `(col + 0.5, row + 0.5)`.
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Culled,
    Visible(ProjectedGaussian),
}

impl Projection {
    pub fn visible(self) -> Option<ProjectedGaussian> {
        match self {
            Projection::Visible(p) => Some(p),
            Projection::Culled => None,
        }
    }
}

#[inline]
pub(crate) fn near_limit(cam: &Camera) -> f64 {
    (cam.z_near * 0.5).max(1e-4)
}

/// Perspective Jacobian of `(fx x / z, fy y / z)` at camera-space `t`.
#[inline]
pub(crate) fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

/// Project a Gaussian to the image plane with the first-order (EWA)
/// covariance approximation `J W Sigma W^T J^T + 0.3 I`.
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera) -> Projection {
    let t = cam.world_to_cam.apply(&g.mean);
    if t.z <= near_limit(cam) {
        return Projection::Culled;
    }
    let w = cam.world_to_cam.rotation;
    let j = projection_jacobian(cam, &t);
    let v = w * g.covariance() * w.transpose();
    let cov2d = j * v * j.transpose() + Matrix2::identity() * COV2D_DILATION;
    Projection::Visible(ProjectedGaussian {
        mean2d: Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy),
        cov2d,
        depth: t.z,
    })
}

/// Everything the compositing kernels and the backward pass need about one
/// visible Gaussian.
#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Inverse 2D covariance `[[a, b], [b, c]]` stored as `(a, b, c)`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub color: [f64; 3],
    pub color_raw: [f64; 3],
    pub t_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    /// Inclusive tile range `(x0, x1, y0, y1)`.
    pub tiles: Option<(usize, usize, usize, usize)>,
}

pub(crate) struct Prepared {
    pub splats: Vec<Splat>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per tile, indices into `splats` in compositing order.
    pub tile_lists: Vec<Vec<u32>>,
}

fn prepare_one(index: usize, g: &Gaussian3D, cam: &Camera, center: &Vector3<f64>) -> Option<Splat> {
    let t = cam.world_to_cam.apply(&g.mean);
    if t.z <= near_limit(cam) {
        return None;
    }
    let w = cam.world_to_cam.rotation;
    let rot = g.rotation.to_matrix();
    let m = rot * Matrix3::from_diagonal(&g.scale);
    let cov_cam = w * (m * m.transpose()) * w.transpose();
    let jacobian = projection_jacobian(cam, &t);
    let c2 = jacobian * cov_cam * jacobian.transpose();
    let xx = c2[(0, 0)] + COV2D_DILATION;
    let xy = 0.5 * (c2[(0, 1)] + c2[(1, 0)]);
    let yy = c2[(1, 1)] + COV2D_DILATION;
    let det = xx * yy - xy * xy;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [yy / det, -xy / det, xx / det];
    let mean2d = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];

    let to_mean = g.mean - center;
    let view_dist = to_mean.norm();
    let view_dir = to_mean / view_dist;
    let color_raw = sh::eval_color(&g.sh, &view_dir);

    let rx = FOOTPRINT_SIGMAS * xx.sqrt();
    let ry = FOOTPRINT_SIGMAS * yy.sqrt();
    let tiles = tile_range(mean2d, rx, ry, cam);

    Some(Splat {
        index,
        mean2d,
        conic,
        opacity: g.opacity,
        depth: t.z,
        color: color_raw.map(|c| c.clamp(0.0, 1.0)),
        color_raw,
        t_cam: t,
        jacobian,
        cov_cam,
        rot,
        view_dir,
        view_dist,
        tiles,
    })
}

fn tile_range(
    mean2d: [f64; 2],
    rx: f64,
    ry: f64,
    cam: &Camera,
) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (x_lo, x_hi) = (mean2d[0] - rx, mean2d[0] + rx);
    let (y_lo, y_hi) = (mean2d[1] - ry, mean2d[1] + ry);
    if !(x_hi >= 0.0 && y_hi >= 0.0 && x_lo <= w && y_lo <= h) {
        return None;
    }
    let ts = TILE_SIZE as f64;
    let max_tx = cam.width.div_ceil(TILE_SIZE) - 1;
    let max_ty = cam.height.div_ceil(TILE_SIZE) - 1;
    let clampi = |v: f64, hi: usize| (v.max(0.0).floor() as usize).min(hi);
    Some((
        clampi(x_lo / ts, max_tx),
        clampi(x_hi / ts, max_tx),
        clampi(y_lo / ts, max_ty),
        clampi(y_hi / ts, max_ty),
    ))
}

/// Project, depth-sort (ties by original index) and bin into tiles.
pub(crate) fn prepare(cloud: &GaussianCloud, cam: &Camera) -> Prepared {
    let center = cam.center();
    let mut splats: Vec<Splat> = cloud
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| prepare_one(i, g, cam, &center))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        if let Some((x0, x1, y0, y1)) = s.tiles {
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    tile_lists[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
    }
    Prepared {
        splats,
        tiles_x,
        tiles_y,
        tile_lists,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::ShCoeffs;
    use crate::types::{FrameId, Quat, RigidTransform};
    use approx::assert_abs_diff_eq;

    fn cam() -> Camera {
        Camera::new(
            FrameId::new("cam"),
            FrameId::world(),
            (100.0, 100.0),
            (64.0, 64.0),
            (128, 128),
            RigidTransform::identity(),
            (0.5, 10.0),
        )
        .unwrap()
    }

    fn iso(mean: Vector3<f64>, s: f64) -> Gaussian3D {
        Gaussian3D::new(
            0.8,
            mean,
            Vector3::new(s, s, s),
            Quat::IDENTITY,
            ShCoeffs::constant([1.0; 3]),
        )
        .unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let p = project_gaussian(&iso(Vector3::new(0.0, 0.0, 2.0), 0.1), &cam())
            .visible()
            .unwrap();
        assert_eq!(p.mean2d, Vector2::new(64.0, 64.0));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert_eq!(
            project_gaussian(&iso(Vector3::new(0.0, 0.0, -1.0), 0.1), &cam()),
            Projection::Culled
        );
        // Inside the near band: z <= z_near / 2.
        assert_eq!(
            project_gaussian(&iso(Vector3::new(0.0, 0.0, 0.2), 0.1), &cam()),
            Projection::Culled
        );
    }

    /// Oracle: push the 3D covariance through a central-difference Jacobian of
    /// the pinhole map.
    #[test]
    fn isotropic_cov2d_matches_numerical_jacobian() {
        let c = cam();
        let (s, z) = (0.05, 2.0);
        let mean = Vector3::new(0.0, 0.0, z);
        let p = project_gaussian(&iso(mean, s), &c).visible().unwrap();

        let project = |x: Vector3<f64>| Vector2::new(c.fx * x.x / x.z + c.cx, c.fy * x.y / x.z + c.cy);
        let h = 1e-6;
        let mut jac = Matrix2x3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let d = (project(mean + e) - project(mean - e)) / (2.0 * h);
            jac.set_column(k, &d);
        }
        let sigma = Matrix3::identity() * (s * s);
        let expected = jac * sigma * jac.transpose() + Matrix2::identity() * COV2D_DILATION;
        assert!((p.cov2d - expected).amax() < 1e-6);
        assert_abs_diff_eq!(p.cov2d[(0, 0)], (c.fx * s / z).powi(2) + 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cov2d[(1, 1)], (c.fy * s / z).powi(2) + 0.3, epsilon = 1e-12);
    }

    #[test]
    fn sort_breaks_ties_by_index() {
        let g = iso(Vector3::new(0.0, 0.0, 2.0), 0.1);
        let cloud = GaussianCloud::new(
            vec![iso(Vector3::new(0.0, 0.0, 3.0), 0.1), g.clone(), g],
            FrameId::world(),
        );
        let p = prepare(&cloud, &cam());
        let order: Vec<usize> = p.splats.iter().map(|s| s.index).collect();
        assert_eq!(order, vec![1, 2, 0]);
    }

    #[test]
    fn offscreen_footprint_has_no_tiles() {
        let cloud = GaussianCloud::new(vec![iso(Vector3::new(50.0, 0.0, 2.0), 0.01)], FrameId::world());
        let p = prepare(&cloud, &cam());
        assert_eq!(p.splats.len(), 1);
        assert!(p.splats[0].tiles.is_none());
        assert!(p.tile_lists.iter().all(Vec::is_empty));
    }
}
