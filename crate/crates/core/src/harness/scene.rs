//! Procedural scenes and their JSON/IMGF/PNG storage.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{read_imgf, write_imgf, write_png};
use crate::error::{Error, Result};
use crate::render::{render_oracle, Image, DEFAULT_ORACLE_STEPS};
use crate::sh::ShCoeffs;
use crate::types::{Camera, FrameId, Gaussian3D, GaussianCloud, Quat, RigidTransform};

/// Distance from every camera to the world origin.
pub const CAMERA_DISTANCE: f64 = 2.0;
pub const SCENE_Z_NEAR: f64 = 0.8;
pub const SCENE_Z_FAR: f64 = 3.2;
/// Tangent of the half field of view along the shorter image side.
pub const HALF_FOV_TAN: f64 = 0.7;
/// Ray length covered by the reference renderer; reaches past anything
/// within 1.6 of the origin.
pub const ORACLE_T_MAX: f64 = 2.0 * CAMERA_DISTANCE;
pub const MIN_LOG_SCALE: f64 = -3.912_023_005_428_146; // ln 0.02
pub const MAX_LOG_SCALE: f64 = -1.609_437_912_434_100_3; // ln 0.2

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ground_truth: GaussianCloud,
    pub views: Vec<View>,
    pub seed: u64,
}

impl Scene {
    /// Number of trailing views held out from training.
    pub fn held_out_count(&self) -> usize {
        held_out_count(self.views.len())
    }

    pub fn train_views(&self) -> &[View] {
        &self.views[..self.views.len() - self.held_out_count()]
    }

    pub fn held_out_views(&self) -> &[View] {
        &self.views[self.views.len() - self.held_out_count()..]
    }
}

/// The last quarter of the views (at least one when there are two or more).
pub fn held_out_count(n_views: usize) -> usize {
    if n_views < 2 {
        0
    } else {
        (n_views / 4).max(1)
    }
}

fn random_unit_quat(rng: &mut impl Rng) -> Quat {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quat::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    )
    .expect("unit quaternion")
}

fn random_in_unit_ball(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let p = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            return p;
        }
    }
}

pub fn random_gaussian(rng: &mut impl Rng) -> Gaussian3D {
    let mean = random_in_unit_ball(rng);
    let scale = Vector3::from_fn(|_, _| rng.gen_range(MIN_LOG_SCALE..MAX_LOG_SCALE).exp());
    let rotation = random_unit_quat(rng);
    let opacity = rng.gen_range(0.5..=1.0);
    let rgb = [0; 3].map(|_| rng.gen_range(0.15..0.95));
    let linear = Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1));
    let sh = ShCoeffs::with_linear(ShCoeffs::from_rgb(rgb).dc, linear);
    Gaussian3D::new(opacity, mean, scale, rotation, sh).expect("valid by construction")
}

/// World-to-camera pose of a camera at `position` looking at the origin,
/// with world +y up and image rows running downwards.
pub fn look_at_origin(position: Vector3<f64>) -> Result<RigidTransform> {
    let forward = -position.normalize();
    let down = Vector3::new(0.0, -1.0, 0.0);
    let right = down.cross(&forward);
    if right.norm() < 1e-6 {
        return Err(Error::invalid("camera looks straight along the up axis"));
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    RigidTransform::new(rot, -(rot * position))
}

/// Camera `k` of a scene, on a golden-angle spiral around the origin.
pub fn orbit_camera(k: usize, phase: f64, (h, w): (usize, usize)) -> Result<Camera> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let azimuth = 2.0 * PI * ((k as f64 * GOLDEN + phase).fract());
    let elevation = -0.3 + 0.9 * ((k as f64 * (1.0 - GOLDEN) + 0.5 * phase).fract());
    let position = CAMERA_DISTANCE
        * Vector3::new(
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
            elevation.cos() * azimuth.cos(),
        );
    let f = h.min(w) as f64 / (2.0 * HALF_FOV_TAN);
    Camera::new(
        FrameId::new(format!("view{k:02}")),
        FrameId::world(),
        (f, f),
        (w as f64 / 2.0, h as f64 / 2.0),
        (w, h),
        look_at_origin(position)?,
        (SCENE_Z_NEAR, SCENE_Z_FAR),
    )
}

pub fn generate_cloud(rng: &mut impl Rng, n_gaussians: usize) -> GaussianCloud {
    GaussianCloud::new(
        (0..n_gaussians).map(|_| random_gaussian(rng)).collect(),
        FrameId::world(),
    )
}

/// Random Gaussians in the unit ball seen by `n_views` cameras at distance 2,
/// each view rendered with the reference renderer.
pub fn generate_scene(
    seed: u64,
    n_gaussians: usize,
    n_views: usize,
    image_size: (usize, usize),
) -> Result<Scene> {
    if n_gaussians < 1 {
        return Err(Error::invalid("a scene needs at least one Gaussian"));
    }
    if n_views < 2 {
        return Err(Error::invalid("a scene needs at least two views"));
    }
    if image_size.0 == 0 || image_size.1 == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground_truth = generate_cloud(&mut rng, n_gaussians);
    let phase: f64 = rng.gen();
    let views = (0..n_views)
        .map(|k| {
            let camera = orbit_camera(k, phase, image_size)?;
            let image = render_oracle(&ground_truth, &camera, DEFAULT_ORACLE_STEPS, ORACLE_T_MAX)?;
            Ok(View { camera, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        ground_truth,
        views,
        seed,
    })
}

/// Seeds of the scenes of a procedural dataset.
pub fn dataset_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub id: FrameId,
    pub frame_id: FrameId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 3x4 `[R | t]`.
    pub world_to_cam: [f64; 12],
    pub z_near: f64,
    pub z_far: f64,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        Self {
            id: c.id.clone(),
            frame_id: c.frame_id.clone(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_cam: c.world_to_cam.to_rows(),
            z_near: c.z_near,
            z_far: c.z_far,
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            self.id.clone(),
            self.frame_id.clone(),
            (self.fx, self.fy),
            (self.cx, self.cy),
            (self.width, self.height),
            RigidTransform::from_rows(&self.world_to_cam)?,
            (self.z_near, self.z_far),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct GaussianRecord {
    opacity: f64,
    mean: [f64; 3],
    scale: [f64; 3],
    /// `(w, x, y, z)`.
    rotation: [f64; 4],
    sh: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct ViewRecord {
    camera: CameraRecord,
    /// Paths relative to the scene document.
    image_png: String,
    image_f32: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct SceneRecord {
    seed: u64,
    frame_id: FrameId,
    ground_truth: Vec<GaussianRecord>,
    views: Vec<ViewRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct DatasetRecord {
    scenes: Vec<String>,
}

fn gaussian_record(g: &Gaussian3D) -> GaussianRecord {
    GaussianRecord {
        opacity: g.opacity,
        mean: g.mean.into(),
        scale: g.scale.into(),
        rotation: g.rotation.to_array(),
        sh: g.sh.to_vec(),
    }
}

fn gaussian_from_record(r: &GaussianRecord) -> Result<Gaussian3D> {
    Gaussian3D::new(
        r.opacity,
        r.mean.into(),
        r.scale.into(),
        Quat::from_array(r.rotation)?,
        ShCoeffs::from_flat(&r.sh)?,
    )
}

fn sibling(path: &Path, suffix: &str) -> (PathBuf, String) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let name = format!("{stem}{suffix}");
    (path.with_file_name(&name), name)
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

/// Write the scene document to `path` and one PNG and one IMGF file per view
/// next to it.
pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut views = Vec::with_capacity(scene.views.len());
    for (k, v) in scene.views.iter().enumerate() {
        let (png_path, png_name) = sibling(path, &format!("_view{k:02}.png"));
        let (f32_path, f32_name) = sibling(path, &format!("_view{k:02}.imgf32"));
        write_png(&v.image, &png_path)?;
        write_imgf(&v.image, &f32_path)?;
        views.push(ViewRecord {
            camera: CameraRecord::from(&v.camera),
            image_png: png_name,
            image_f32: f32_name,
        });
    }
    let record = SceneRecord {
        seed: scene.seed,
        frame_id: scene.ground_truth.frame_id.clone(),
        ground_truth: scene.ground_truth.gaussians.iter().map(gaussian_record).collect(),
        views,
    };
    std::fs::write(path, serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

fn scene_from_record(record: SceneRecord, dir: &Path) -> Result<Scene> {
    let gaussians = record
        .ground_truth
        .iter()
        .map(gaussian_from_record)
        .collect::<Result<Vec<_>>>()?;
    let views = record
        .views
        .iter()
        .map(|v| {
            let camera = v.camera.to_camera()?;
            let image = read_imgf(dir.join(&v.image_f32))?;
            if image.height() != camera.height || image.width() != camera.width {
                return Err(Error::DimensionMismatch(format!(
                    "view {} image is {}x{}, camera is {}x{}",
                    camera.id,
                    image.height(),
                    image.width(),
                    camera.height,
                    camera.width
                )));
            }
            Ok(View { camera, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        ground_truth: GaussianCloud::new(gaussians, record.frame_id),
        views,
        seed: record.seed,
    })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let record: SceneRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    scene_from_record(record, base_dir(path))
}

/// Write each scene as `<stem>_NNN.json` next to `path`, and a document at
/// `path` listing them.
pub fn save_dataset(scenes: &[Scene], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut names = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let (p, name) = sibling(path, &format!("_{i:03}.json"));
        save_scene(s, &p)?;
        names.push(name);
    }
    std::fs::write(
        path,
        serde_json::to_string_pretty(&DatasetRecord { scenes: names })? + "\n",
    )?;
    Ok(())
}

/// Load either a dataset document or a single scene document.
pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("scenes").is_some() {
        let record: DatasetRecord = serde_json::from_value(value)?;
        record
            .scenes
            .iter()
            .map(|name| load_scene(base_dir(path).join(name)))
            .collect()
    } else {
        let record: SceneRecord = serde_json::from_value(value)?;
        Ok(vec![scene_from_record(record, base_dir(path))?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(5, 4, 3, (16, 16)).unwrap();
        let b = generate_scene(5, 4, 3, (16, 16)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(6, 4, 3, (16, 16)).unwrap();
        assert_ne!(a.ground_truth, c.ground_truth);
    }

    #[test]
    fn eight_distinct_valid_cameras() {
        let s = generate_scene(1, 2, 8, (16, 24)).unwrap();
        assert_eq!(s.views.len(), 8);
        for (i, a) in s.views.iter().enumerate() {
            a.camera.validate().unwrap();
            assert!((a.camera.center().norm() - CAMERA_DISTANCE).abs() < 1e-12);
            // Looks at the origin.
            let o = a.camera.world_to_cam.apply(&Vector3::zeros());
            assert!(o.x.abs() < 1e-12 && o.y.abs() < 1e-12 && (o.z - CAMERA_DISTANCE).abs() < 1e-12);
            for b in &s.views[i + 1..] {
                assert!((a.camera.center() - b.camera.center()).norm() > 1e-3);
            }
        }
    }

    #[test]
    fn views_are_reference_renders() {
        let s = generate_scene(2, 3, 2, (12, 12)).unwrap();
        for v in &s.views {
            let again = render_oracle(&s.ground_truth, &v.camera, DEFAULT_ORACLE_STEPS, ORACLE_T_MAX).unwrap();
            assert_eq!(again, v.image);
        }
    }

    #[test]
    fn generated_parameters_within_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let g = random_gaussian(&mut rng);
            assert!(g.mean.norm() <= 1.0);
            assert!((0.5..=1.0).contains(&g.opacity));
            for s in g.scale.iter() {
                assert!((0.02..=0.2).contains(s));
            }
            assert_eq!(g.sh.order(), 1);
        }
    }

    #[test]
    fn held_out_split() {
        assert_eq!(held_out_count(10), 2);
        assert_eq!(held_out_count(8), 2);
        assert_eq!(held_out_count(2), 1);
        let s = generate_scene(3, 1, 10, (8, 8)).unwrap();
        assert_eq!(s.train_views().len(), 8);
        assert_eq!(s.held_out_views()[0].camera.id.as_str(), "view08");
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = generate_scene(4, 3, 2, (8, 10)).unwrap();
        save_scene(&s, &path).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back.views, s.views);
        assert_eq!(back.seed, s.seed);
        for (a, b) in back.ground_truth.gaussians.iter().zip(&s.ground_truth.gaussians) {
            assert_eq!(a.mean, b.mean);
            assert!((a.covariance() - b.covariance()).amax() < 1e-14);
        }
        assert!(dir.path().join("s_view01.png").exists());
        assert_eq!(load_scenes(&path).unwrap().len(), 1);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let scenes: Vec<Scene> = dataset_seeds(1, 2)
            .into_iter()
            .map(|s| generate_scene(s, 1, 2, (8, 8)).unwrap())
            .collect();
        save_dataset(&scenes, &path).unwrap();
        let back = load_scenes(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].views, scenes[1].views);
    }
}
