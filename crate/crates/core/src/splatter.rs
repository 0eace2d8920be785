//! The splatter image: an `H x W` grid of raw per-pixel Gaussian parameters,
//! their activation into camera-space Gaussians, and the `SPLT` file format.
//!
//! Channel layout of one pixel, fixed for the file format:
//!
//! | channels      | meaning                         |
//! |---------------|---------------------------------|
//! | 0             | opacity logit                   |
//! | 1..4          | offset `(dx, dy, dz)`           |
//! | 4             | depth logit                     |
//! | 5..8          | log-scales                      |
//! | 8..12         | raw quaternion `(w, x, y, z)`   |
//! | 12..12+k_c    | colour coefficients             |

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, ParseErrorKind, Result};
use crate::sh::{self, ShCoeffs};
use crate::types::{Camera, Gaussian3D, GaussianCloud, Quat};

pub const CH_OPACITY: usize = 0;
pub const CH_OFFSET: usize = 1;
pub const CH_DEPTH: usize = 4;
pub const CH_LOG_SCALE: usize = 5;
pub const CH_QUAT: usize = 8;
pub const CH_SH: usize = 12;

/// Opacity threshold below an 8-bit quantization step.
pub const DEFAULT_CULL_THRESHOLD: f64 = 1.0 / 255.0;

pub const SPLT_MAGIC: &[u8; 4] = b"SPLT";
pub const SPLT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// Channels per pixel for a colour coefficient count.
pub fn channel_count(k_c: usize) -> usize {
    CH_SH + k_c
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw (pre-activation) parameters of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPixelParams {
    pub opacity_logit: f64,
    pub offset: Vector3<f64>,
    pub depth_logit: f64,
    pub log_scale: Vector3<f64>,
    pub quat_raw: [f64; 4],
    pub sh_raw: Vec<f64>,
}

impl RawPixelParams {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 15 && v.len() != 24 {
            return Err(Error::invalid(format!(
                "raw pixel has {} channels, expected 15 or 24",
                v.len()
            )));
        }
        Ok(Self {
            opacity_logit: v[CH_OPACITY],
            offset: Vector3::new(v[CH_OFFSET], v[CH_OFFSET + 1], v[CH_OFFSET + 2]),
            depth_logit: v[CH_DEPTH],
            log_scale: Vector3::new(v[CH_LOG_SCALE], v[CH_LOG_SCALE + 1], v[CH_LOG_SCALE + 2]),
            quat_raw: [v[CH_QUAT], v[CH_QUAT + 1], v[CH_QUAT + 2], v[CH_QUAT + 3]],
            sh_raw: v[CH_SH..].to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(channel_count(self.sh_raw.len()));
        v.push(self.opacity_logit);
        v.extend(self.offset.iter());
        v.push(self.depth_logit);
        v.extend(self.log_scale.iter());
        v.extend(self.quat_raw);
        v.extend(&self.sh_raw);
        v
    }
}

/// Activate one raw parameter vector along the camera-space ray
/// `u = (u1, u2, 1)`: `mu = (u1 d + dx, u2 d + dy, d + dz)` with
/// `d = (z_far - z_near) sigmoid(depth_logit) + z_near`.
pub fn activate_along_ray(
    raw: &[f64],
    ray: &Vector3<f64>,
    z_near: f64,
    z_far: f64,
) -> Result<Gaussian3D> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite raw parameter"));
    }
    let opacity = sigmoid(raw[CH_OPACITY]);
    let depth = (z_far - z_near) * sigmoid(raw[CH_DEPTH]) + z_near;
    let offset = Vector3::new(raw[CH_OFFSET], raw[CH_OFFSET + 1], raw[CH_OFFSET + 2]);
    let mean = Vector3::new(ray.x * depth, ray.y * depth, depth) + offset;
    let scale = Vector3::new(
        raw[CH_LOG_SCALE].exp(),
        raw[CH_LOG_SCALE + 1].exp(),
        raw[CH_LOG_SCALE + 2].exp(),
    );
    let rotation = Quat::new(
        raw[CH_QUAT],
        raw[CH_QUAT + 1],
        raw[CH_QUAT + 2],
        raw[CH_QUAT + 3],
    )?;
    let sh = ShCoeffs::from_flat(&raw[CH_SH..])?;
    if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!(
            "log-scales {:?} overflow or underflow",
            &raw[CH_LOG_SCALE..CH_LOG_SCALE + 3]
        )));
    }
    Ok(Gaussian3D {
        opacity,
        mean,
        scale,
        rotation,
        sh,
    })
}

/// Activate the parameters stored at `(row, col)` for camera `cam`, using the
/// camera's depth range.
pub fn activate_pixel(
    raw: &RawPixelParams,
    (row, col): (usize, usize),
    cam: &Camera,
) -> Result<Gaussian3D> {
    if row >= cam.height || col >= cam.width {
        return Err(Error::invalid(format!(
            "pixel ({row}, {col}) outside {}x{} grid",
            cam.height, cam.width
        )));
    }
    activate_along_ray(&raw.to_vec(), &cam.pixel_ray(row, col), cam.z_near, cam.z_far)
}

/// The raw `H x W x (12 + k_c)` tensor plus its depth range.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatterImage {
    height: usize,
    width: usize,
    k_c: usize,
    data: Vec<f32>,
    depth_range: (f32, f32),
}

impl SplatterImage {
    pub fn new(
        height: usize,
        width: usize,
        k_c: usize,
        data: Vec<f32>,
        depth_range: (f32, f32),
    ) -> Result<Self> {
        sh::order_for_count(k_c)?;
        if data.len() != height * width * channel_count(k_c) {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width}x{} tensor",
                data.len(),
                channel_count(k_c)
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite raw parameter"));
        }
        let (zn, zf) = depth_range;
        if !(zn > 0.0 && zn < zf && zf.is_finite()) {
            return Err(Error::invalid(format!(
                "depth range must satisfy 0 < z_near < z_far, got ({zn}, {zf})"
            )));
        }
        Ok(Self {
            height,
            width,
            k_c,
            data,
            depth_range,
        })
    }

    /// Build from `f64` parameters, rounding to the stored precision.
    pub fn from_f64(
        height: usize,
        width: usize,
        k_c: usize,
        params: &[f64],
        depth_range: (f64, f64),
    ) -> Result<Self> {
        Self::new(
            height,
            width,
            k_c,
            params.iter().map(|&v| v as f32).collect(),
            (depth_range.0 as f32, depth_range.1 as f32),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k_c(&self) -> usize {
        self.k_c
    }

    pub fn order(&self) -> usize {
        usize::from(self.k_c == 12)
    }

    pub fn channels(&self) -> usize {
        channel_count(self.k_c)
    }

    pub fn depth_range(&self) -> (f32, f32) {
        self.depth_range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn pixel(&self, row: usize, col: usize) -> RawPixelParams {
        let c = self.channels();
        let start = (row * self.width + col) * c;
        let v: Vec<f64> = self.data[start..start + c]
            .iter()
            .map(|&x| f64::from(x))
            .collect();
        RawPixelParams::from_slice(&v).expect("channel count validated on construction")
    }
}

/// Activate a flat `f64` parameter grid (same layout as [`SplatterImage`]) into
/// a camera-frame cloud in row-major order.
pub fn unpack_params(
    params: &[f64],
    (height, width, k_c): (usize, usize, usize),
    (z_near, z_far): (f64, f64),
    cam: &Camera,
) -> Result<GaussianCloud> {
    let c = channel_count(k_c);
    if params.len() != height * width * c {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters for a {height}x{width}x{c} grid",
            params.len()
        )));
    }
    if cam.height != height || cam.width != width {
        return Err(Error::DimensionMismatch(format!(
            "camera is {}x{} but the splatter image is {height}x{width}",
            cam.height, cam.width
        )));
    }
    let mut gaussians = Vec::with_capacity(height * width);
    let mut far_offsets = 0usize;
    let offset_limit = 2.0 * (z_far - z_near);
    for row in 0..height {
        for col in 0..width {
            let idx = row * width + col;
            let raw = &params[idx * c..(idx + 1) * c];
            let g = activate_along_ray(raw, &cam.pixel_ray(row, col), z_near, z_far).map_err(
                |e| Error::AtPixel {
                    row,
                    col,
                    source: Box::new(e),
                },
            )?;
            let off = Vector3::new(raw[CH_OFFSET], raw[CH_OFFSET + 1], raw[CH_OFFSET + 2]);
            if off.amax() > offset_limit {
                far_offsets += 1;
            }
            gaussians.push(g);
        }
    }
    if far_offsets > 0 {
        log::warn!("{far_offsets} pixel offsets exceed 2 * (z_far - z_near) = {offset_limit}");
    }
    Ok(GaussianCloud::new(gaussians, cam.id.clone()))
}

/// One Gaussian per pixel, in the camera frame of `cam`, row-major. The depth
/// range stored in `m` takes precedence over the camera's.
pub fn unpack(m: &SplatterImage, cam: &Camera) -> Result<GaussianCloud> {
    let (zn, zf) = m.depth_range;
    unpack_params(
        &m.to_f64(),
        (m.height, m.width, m.k_c),
        (f64::from(zn), f64::from(zf)),
        cam,
    )
}

/// Keep Gaussians with opacity at least `min_opacity`, preserving order.
pub fn cull(cloud: &GaussianCloud, min_opacity: f64) -> Result<GaussianCloud> {
    if !(0.0..1.0).contains(&min_opacity) {
        return Err(Error::invalid(format!(
            "cull threshold {min_opacity} outside [0, 1)"
        )));
    }
    Ok(GaussianCloud::new(
        cloud
            .gaussians
            .iter()
            .filter(|g| g.opacity >= min_opacity)
            .cloned()
            .collect(),
        cloud.frame_id.clone(),
    ))
}

impl SplatterImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(SPLT_MAGIC);
        out.extend_from_slice(&SPLT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.k_c as u32).to_le_bytes());
        out.extend_from_slice(&self.depth_range.0.to_le_bytes());
        out.extend_from_slice(&self.depth_range.1.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != SPLT_MAGIC {
            return Err(Error::parse(0, ParseErrorKind::BadMagic));
        }
        let version = r.u32()?;
        if version != SPLT_VERSION {
            return Err(Error::parse(4, ParseErrorKind::UnsupportedVersion(version)));
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let k_c_off = r.pos;
        let k_c = r.u32()?;
        if k_c != 3 && k_c != 12 {
            return Err(Error::parse(k_c_off, ParseErrorKind::InvalidChannelCount(k_c)));
        }
        let zn = r.f32()?;
        let zf = r.f32()?;
        if !(zn > 0.0 && zn < zf && zf.is_finite()) {
            return Err(Error::parse(
                20,
                ParseErrorKind::Invalid(format!("depth range ({zn}, {zf})")),
            ));
        }
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channel_count(k_c as usize)))
            .ok_or_else(|| Error::parse(8, ParseErrorKind::Invalid("dimensions overflow".into())))?;
        if bytes.len() - HEADER_LEN < count.saturating_mul(4) {
            return Err(Error::parse(bytes.len(), ParseErrorKind::Truncated));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let off = r.pos;
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::parse(off, ParseErrorKind::NonFinite));
            }
            data.push(v);
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(
                r.pos,
                ParseErrorKind::Invalid("trailing bytes".into()),
            ));
        }
        Self::new(height, width, k_c as usize, data, (zn, zf))
    }
}

pub fn write_file(m: &SplatterImage, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, m.to_bytes())?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<SplatterImage> {
    SplatterImage::from_bytes(&std::fs::read(path)?)
}

/// Little-endian cursor reporting truncation at the offending offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.bytes.len(), ParseErrorKind::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FrameId, RigidTransform};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera(h: usize, w: usize, z: (f64, f64)) -> Camera {
        Camera::new(
            FrameId::new("ref"),
            FrameId::world(),
            (1.3 * w as f64, 1.3 * w as f64),
            (w as f64 / 2.0, h as f64 / 2.0),
            (w, h),
            RigidTransform::identity(),
            z,
        )
        .unwrap()
    }

    fn random_image(rng: &mut impl Rng, h: usize, w: usize, k_c: usize) -> SplatterImage {
        let n = h * w * channel_count(k_c);
        let data = (0..n).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        SplatterImage::new(h, w, k_c, data, (0.75, 3.25)).unwrap()
    }

    fn base_raw() -> Vec<f64> {
        let mut raw = vec![0.0; 15];
        raw[CH_QUAT] = 1.0;
        raw
    }

    #[test]
    fn zero_logits_give_half_opacity_and_mid_depth() {
        let raw = base_raw();
        let g = activate_along_ray(&raw, &Vector3::new(0.0, 0.0, 1.0), 0.8, 2.8).unwrap();
        assert_eq!(g.opacity, 0.5);
        assert_abs_diff_eq!(g.mean.z, 1.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_offset_lands_on_ray() {
        // d = 2 needs sigmoid(d_hat) = 0.5 over the range (1, 3).
        let raw = base_raw();
        let g = activate_along_ray(&raw, &Vector3::new(0.5, -0.25, 1.0), 1.0, 3.0).unwrap();
        assert_eq!(g.mean, Vector3::new(1.0, -0.5, 2.0));
    }

    #[test]
    fn quaternion_normalized_and_scale_exponentiated() {
        let mut raw = base_raw();
        raw[CH_QUAT] = 2.0;
        let g = activate_along_ray(&raw, &Vector3::new(0.0, 0.0, 1.0), 1.0, 3.0).unwrap();
        assert_eq!(g.scale, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(g.rotation, Quat::IDENTITY);
        assert_eq!(g.covariance(), nalgebra::Matrix3::identity());
    }

    #[test]
    fn degenerate_quaternion_is_an_error() {
        let mut raw = base_raw();
        raw[CH_QUAT] = 0.0;
        assert!(matches!(
            activate_along_ray(&raw, &Vector3::z(), 1.0, 3.0),
            Err(Error::DegenerateRotation { .. })
        ));
    }

    #[test]
    fn activate_pixel_uses_pixel_centre_ray() {
        let cam = camera(4, 4, (1.0, 3.0));
        let raw = RawPixelParams::from_slice(&base_raw()).unwrap();
        let g = activate_pixel(&raw, (1, 3), &cam).unwrap();
        let u = cam.pixel_ray(1, 3);
        assert_eq!(g.mean, u * 2.0);
        assert!(activate_pixel(&raw, (4, 0), &cam).is_err());
    }

    #[test]
    fn unpack_order_is_row_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_image(&mut rng, 2, 2, 3);
        let cam = camera(2, 2, (0.75, 3.25));
        let cloud = unpack(&m, &cam).unwrap();
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.frame_id, cam.id);
        let order = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for (g, &(r, c)) in cloud.gaussians.iter().zip(&order) {
            let expected = activate_pixel(&m.pixel(r, c), (r, c), &cam).unwrap();
            assert_eq!(g, &expected);
        }
    }

    #[test]
    fn unpack_matches_elementwise_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m = random_image(&mut rng, 8, 8, 12);
        let cam = camera(8, 8, (0.75, 3.25));
        let cloud = unpack(&m, &cam).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let g = activate_pixel(&m.pixel(r, c), (r, c), &cam).unwrap();
                assert_eq!(cloud.gaussians[r * 8 + c], g);
            }
        }
    }

    #[test]
    fn saturated_opacity_logits() {
        let h = 3;
        let w = 3;
        let mut data = vec![0.0f32; h * w * 15];
        for p in 0..h * w {
            data[p * 15 + CH_OPACITY] = -50.0;
            data[p * 15 + CH_QUAT] = 1.0;
        }
        let m = SplatterImage::new(h, w, 3, data, (0.8, 3.2)).unwrap();
        let cloud = unpack(&m, &camera(h, w, (0.8, 3.2))).unwrap();
        assert_eq!(cloud.len(), 9);
        assert!(cloud.gaussians.iter().all(|g| g.opacity < 1e-20 && g.opacity > 0.0));
    }

    #[test]
    fn unpack_reports_pixel_of_failure() {
        let mut data = vec![0.0f32; 2 * 2 * 15];
        for p in 0..4 {
            data[p * 15 + CH_QUAT] = 1.0;
        }
        data[3 * 15 + CH_QUAT] = 0.0;
        let m = SplatterImage::new(2, 2, 3, data, (0.8, 3.2)).unwrap();
        match unpack(&m, &camera(2, 2, (0.8, 3.2))) {
            Err(Error::AtPixel { row: 1, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unpack_rejects_size_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_image(&mut rng, 4, 4, 3);
        assert!(matches!(
            unpack(&m, &camera(4, 5, (0.8, 3.2))),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn cull_threshold_cases() {
        let mk = |o| Gaussian3D {
            opacity: o,
            mean: Vector3::zeros(),
            scale: Vector3::new(1.0, 1.0, 1.0),
            rotation: Quat::IDENTITY,
            sh: ShCoeffs::constant([0.0; 3]),
        };
        let cloud = GaussianCloud::new(vec![mk(0.9), mk(0.001), mk(0.5)], FrameId::world());
        let kept = cull(&cloud, 0.01).unwrap();
        assert_eq!(kept.gaussians, vec![mk(0.9), mk(0.5)]);
        assert_eq!(cull(&cloud, 0.0).unwrap(), cloud);
        assert!(cull(&cloud, 1.0).is_err());
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let m = random_image(&mut rng, 16, 16, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.splt");
        write_file(&m, &path).unwrap();
        let back = read_file(&path).unwrap();
        assert_eq!(back, m);
        let a: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn file_errors_name_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let m = random_image(&mut rng, 2, 3, 3);
        let good = m.to_bytes();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            SplatterImage::from_bytes(&bad),
            Err(Error::Parse { offset: 0, kind: ParseErrorKind::BadMagic })
        ));

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            SplatterImage::from_bytes(&bad),
            Err(Error::Parse { offset: 4, kind: ParseErrorKind::UnsupportedVersion(2) })
        ));

        let mut bad = good.clone();
        bad[16..20].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            SplatterImage::from_bytes(&bad),
            Err(Error::Parse { offset: 16, kind: ParseErrorKind::InvalidChannelCount(7) })
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            SplatterImage::from_bytes(truncated),
            Err(Error::Parse { kind: ParseErrorKind::Truncated, .. })
        ));

        let mut bad = good.clone();
        let off = HEADER_LEN + 4 * 5;
        bad[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match SplatterImage::from_bytes(&bad) {
            Err(Error::Parse { offset, kind: ParseErrorKind::NonFinite }) => assert_eq!(offset, off),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_channel_counts_in_memory() {
        assert!(SplatterImage::new(1, 1, 7, vec![0.0; 19], (0.5, 1.0)).is_err());
        assert!(SplatterImage::new(1, 1, 3, vec![0.0; 14], (0.5, 1.0)).is_err());
        assert!(SplatterImage::new(1, 1, 3, vec![0.0; 15], (1.0, 0.5)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn activation_stays_in_range_and_on_ray(
            raw in proptest::collection::vec(-30.0f64..30.0, 15),
            u in proptest::array::uniform2(-2.0f64..2.0),
        ) {
            let mut raw = raw;
            raw[CH_QUAT] += 31.0;
            for c in CH_LOG_SCALE..CH_LOG_SCALE + 3 {
                raw[c] /= 5.0;
            }
            let ray = Vector3::new(u[0], u[1], 1.0);
            let g = activate_along_ray(&raw, &ray, 0.8, 3.2).unwrap();
            proptest::prop_assert!(g.opacity > 0.0 && g.opacity < 1.0);
            let depth = g.mean.z - raw[CH_OFFSET + 2];
            proptest::prop_assert!(depth >= 0.8 && depth <= 3.2);
            let on_ray = Vector3::new(g.mean.x - raw[CH_OFFSET], g.mean.y - raw[CH_OFFSET + 1], depth);
            proptest::prop_assert!((on_ray - ray * depth).amax() <= 1e-12 * (1.0 + depth));
            proptest::prop_assert!((g.rotation.to_array().iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(g.scale.iter().all(|&s| s > 0.0));
        }

        #[test]
        fn unpack_yields_one_gaussian_per_pixel(
            h in 1usize..6,
            w in 1usize..6,
            order in 0usize..2,
            seed in 0u64..1000,
        ) {
            let k_c = sh::coeff_count(order).unwrap();
            let n = h * w * channel_count(k_c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..n).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
            let m = SplatterImage::new(h, w, k_c, data, (0.75, 3.25)).unwrap();
            let cloud = unpack(&m, &camera(h, w, (0.75, 3.25))).unwrap();
            proptest::prop_assert_eq!(cloud.len(), h * w);
            let back = SplatterImage::from_bytes(&m.to_bytes()).unwrap();
            proptest::prop_assert_eq!(back, m);
        }
    }
}
