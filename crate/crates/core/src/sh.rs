//! View-dependent colour from real spherical harmonics of order 0 and 1.
//!
//! The degree-one band is stacked as `[Y_1^{-1}, Y_1^0, Y_1^1]`, which equals
//! `sqrt(3 / 4pi) * P * nu` with `P` the cyclic permutation taking
//! `(x, y, z)` to `(y, z, x)`. A rotation `R` of the viewing frame therefore acts
//! on the degree-one coefficients of every colour channel as `P R P^T`, and the
//! constant band is left alone.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// `Y_0^0 = 1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// `sqrt(3 / (4 pi))`.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Largest supported number of colour coefficients per Gaussian.
pub const MAX_SH_COEFFS: usize = 12;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Number of colour coefficients (`k_c`) for an SH order.
pub fn coeff_count(order: usize) -> Result<usize> {
    match order {
        0 => Ok(3),
        1 => Ok(12),
        other => Err(Error::UnsupportedOrder(other)),
    }
}

/// SH order for a coefficient count, the inverse of [`coeff_count`].
pub fn order_for_count(k_c: usize) -> Result<usize> {
    match k_c {
        3 => Ok(0),
        12 => Ok(1),
        // (order + 1)^2 * 3 coefficients for higher orders
        27 => Err(Error::UnsupportedOrder(2)),
        48 => Err(Error::UnsupportedOrder(3)),
        other => Err(Error::invalid(format!(
            "colour coefficient count {other} is not 3 or 12"
        ))),
    }
}

/// The cyclic permutation `(x, y, z) -> (y, z, x)`.
pub fn permutation() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0,
    )
}

/// Colour coefficients of one Gaussian.
///
/// `linear` rows are the RGB channels, columns the three degree-one basis
/// functions in `[Y_1^{-1}, Y_1^0, Y_1^1]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShCoeffs {
    pub dc: [f64; 3],
    pub linear: Option<Matrix3<f64>>,
}

impl ShCoeffs {
    pub fn constant(dc: [f64; 3]) -> Self {
        Self { dc, linear: None }
    }

    pub fn with_linear(dc: [f64; 3], linear: Matrix3<f64>) -> Self {
        Self {
            dc,
            linear: Some(linear),
        }
    }

    /// Coefficients whose order-0 colour is exactly `rgb`.
    pub fn from_rgb(rgb: [f64; 3]) -> Self {
        Self::constant(rgb.map(|c| c / SH_C0))
    }

    pub fn order(&self) -> usize {
        usize::from(self.linear.is_some())
    }

    pub fn len(&self) -> usize {
        if self.linear.is_some() {
            12
        } else {
            3
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_finite(&self) -> bool {
        self.dc.iter().all(|v| v.is_finite())
            && self.linear.is_none_or(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Flattened layout: `dc[3]`, then the linear block row by row
    /// (channel-major).
    pub fn to_flat(&self, out: &mut [f64]) {
        out[..3].copy_from_slice(&self.dc);
        if let Some(lin) = &self.linear {
            for ch in 0..3 {
                for k in 0..3 {
                    out[3 + ch * 3 + k] = lin[(ch, k)];
                }
            }
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.to_flat(&mut v);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        order_for_count(flat.len())?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite colour coefficient"));
        }
        let dc = [flat[0], flat[1], flat[2]];
        if flat.len() == 3 {
            return Ok(Self::constant(dc));
        }
        let lin = Matrix3::from_fn(|ch, k| flat[3 + ch * 3 + k]);
        Ok(Self::with_linear(dc, lin))
    }
}

/// Degree-one basis `sqrt(3/4pi) * P * nu` without the unit-norm check.
#[inline]
pub(crate) fn linear_basis(dir: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(dir.y, dir.z, dir.x) * SH_C1
}

fn check_unit(dir: &Vector3<f64>) -> Result<()> {
    let n = dir.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!(
            "viewing direction must be unit length, got norm {n}"
        )));
    }
    Ok(())
}

/// Basis values `[Y_0^0]` (order 0) or `[Y_0^0, Y_1^{-1}, Y_1^0, Y_1^1]`
/// (order 1).
pub fn sh_basis(dir: &Vector3<f64>, order: usize) -> Result<Vec<f64>> {
    check_unit(dir)?;
    match order {
        0 => Ok(vec![SH_C0]),
        1 => {
            let y1 = linear_basis(dir);
            Ok(vec![SH_C0, y1[0], y1[1], y1[2]])
        }
        other => Err(Error::UnsupportedOrder(other)),
    }
}

/// Unclamped colour `C0 * dc + linear * Y_1(dir)` per channel.
///
/// `dir` is assumed unit length; callers at API boundaries should go through
/// [`sh_basis`] when that is not already guaranteed.
#[inline]
pub fn eval_color(c: &ShCoeffs, dir: &Vector3<f64>) -> [f64; 3] {
    let mut out = c.dc.map(|v| v * SH_C0);
    if let Some(lin) = &c.linear {
        let y1 = linear_basis(dir);
        let d = lin * y1;
        out[0] += d[0];
        out[1] += d[1];
        out[2] += d[2];
    }
    out
}

/// Coefficients `c'` with `eval_color(c, nu) == eval_color(c', R nu)` for all
/// unit `nu`. The constant band is unchanged.
pub fn rotate_sh(c: &ShCoeffs, rotation: &Matrix3<f64>) -> ShCoeffs {
    match &c.linear {
        None => *c,
        Some(lin) => {
            // Each channel row a satisfies a' = (P R P^T) a, i.e. rows
            // transform by right-multiplying with P R^T P^T.
            let p = permutation();
            let act = p * rotation.transpose() * p.transpose();
            ShCoeffs::with_linear(c.dc, lin * act)
        }
    }
}

/// [`rotate_sh`] over a flat coefficient slice of any advertised length.
pub fn rotate_flat(flat: &[f64], rotation: &Matrix3<f64>) -> Result<Vec<f64>> {
    let c = ShCoeffs::from_flat(flat)?;
    Ok(rotate_sh(&c, rotation).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn random_coeffs(rng: &mut impl Rng) -> ShCoeffs {
        let dc = [rng.gen_range(-2.0..2.0), rng.gen(), rng.gen()];
        ShCoeffs::with_linear(dc, Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn basis_constants() {
        assert_abs_diff_eq!(SH_C0, 0.5 / std::f64::consts::PI.sqrt(), epsilon = 1e-16);
        assert_abs_diff_eq!(
            SH_C1,
            (3.0 / (4.0 * std::f64::consts::PI)).sqrt(),
            epsilon = 1e-16
        );
    }

    #[test]
    fn basis_along_z_fills_middle_slot() {
        let b = sh_basis(&Vector3::z(), 1).unwrap();
        assert_abs_diff_eq!(b[0], 0.2820947918, epsilon = 1e-10);
        assert_eq!(b[1], 0.0);
        assert_abs_diff_eq!(b[2], 0.4886025119, epsilon = 1e-10);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn basis_along_x_fills_last_slot() {
        let b = sh_basis(&Vector3::x(), 1).unwrap();
        assert_eq!(b[1], 0.0);
        assert_eq!(b[2], 0.0);
        assert_abs_diff_eq!(b[3], 0.4886025119, epsilon = 1e-10);
    }

    #[test]
    fn order_zero_basis_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let b = sh_basis(&random_unit(&mut rng), 0).unwrap();
            assert_eq!(b, vec![SH_C0]);
        }
    }

    #[test]
    fn basis_rejects_unnormalized_direction() {
        assert!(matches!(
            sh_basis(&Vector3::new(1.0, 1.0, 0.0), 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            sh_basis(&Vector3::z(), 2),
            Err(Error::UnsupportedOrder(2))
        ));
    }

    #[test]
    fn order_zero_color_is_view_independent() {
        let c = ShCoeffs::from_rgb([0.2, 0.4, 0.6]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let col = eval_color(&c, &random_unit(&mut rng));
            assert_abs_diff_eq!(col[0], 0.2, epsilon = 1e-15);
            assert_abs_diff_eq!(col[1], 0.4, epsilon = 1e-15);
            assert_abs_diff_eq!(col[2], 0.6, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_linear_block_reduces_to_dc() {
        let c = ShCoeffs::with_linear([1.0, -2.0, 0.5], Matrix3::zeros());
        let col = eval_color(&c, &Vector3::new(0.6, 0.0, 0.8));
        assert_eq!(col, [SH_C0, -2.0 * SH_C0, 0.5 * SH_C0]);
    }

    #[test]
    fn color_matches_explicit_basis_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let c = random_coeffs(&mut rng);
            let dir = random_unit(&mut rng);
            let basis = sh_basis(&dir, 1).unwrap();
            let flat = c.to_vec();
            let col = eval_color(&c, &dir);
            for ch in 0..3 {
                let mut dot = flat[ch] * basis[0];
                for k in 0..3 {
                    dot += flat[3 + ch * 3 + k] * basis[1 + k];
                }
                assert_abs_diff_eq!(col[ch], dot, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_rotation_is_bitwise_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_coeffs(&mut rng);
        assert_eq!(rotate_sh(&c, &Matrix3::identity()), c);
        let c0 = ShCoeffs::constant([0.1, 0.2, 0.3]);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        assert_eq!(rotate_sh(&c0, &r), c0);
    }

    #[test]
    fn closure_quarter_turn_about_z() {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2)
            .into_inner();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let c = random_coeffs(&mut rng);
            let dir = random_unit(&mut rng);
            let rotated = rotate_sh(&c, &r);
            let a = eval_color(&c, &dir);
            let b = eval_color(&rotated, &(r * dir));
            for ch in 0..3 {
                worst = worst.max((a[ch] - b[ch]).abs());
            }
        }
        assert!(worst <= 1e-12, "worst {worst}");
    }

    #[test]
    fn flat_rotation_rejects_higher_orders() {
        let r = Matrix3::identity();
        assert!(matches!(
            rotate_flat(&[0.0; 27], &r),
            Err(Error::UnsupportedOrder(2))
        ));
        assert!(rotate_flat(&[0.0; 7], &r).is_err());
        assert_eq!(rotate_flat(&[1.0, 2.0, 3.0], &r).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    fn rotation_from(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
        let v = Vector3::from(axis);
        Rotation3::new(v.normalize() * angle).into_inner()
    }

    fn max_diff(a: &ShCoeffs, b: &ShCoeffs) -> f64 {
        a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    proptest::proptest! {
        #[test]
        fn closure_holds_for_any_rotation(
            axis in proptest::array::uniform3(-1.0f64..1.0),
            angle in -3.2f64..3.2,
            seed in 0u64..10_000,
        ) {
            proptest::prop_assume!(Vector3::from(axis).norm() > 1e-3);
            let r = rotation_from(axis, angle);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_coeffs(&mut rng);
            let dir = random_unit(&mut rng);
            let a = eval_color(&c, &dir);
            let b = eval_color(&rotate_sh(&c, &r), &(r * dir));
            for ch in 0..3 {
                proptest::prop_assert!((a[ch] - b[ch]).abs() <= 1e-10);
            }
        }

        #[test]
        fn rotation_composes_and_inverts(
            a in proptest::array::uniform3(-1.0f64..1.0),
            b in proptest::array::uniform3(-1.0f64..1.0),
            ta in -3.0f64..3.0,
            tb in -3.0f64..3.0,
            seed in 0u64..10_000,
        ) {
            proptest::prop_assume!(Vector3::from(a).norm() > 1e-3 && Vector3::from(b).norm() > 1e-3);
            let (ra, rb) = (rotation_from(a, ta), rotation_from(b, tb));
            let c = random_coeffs(&mut ChaCha8Rng::seed_from_u64(seed));
            let stepwise = rotate_sh(&rotate_sh(&c, &ra), &rb);
            let composed = rotate_sh(&c, &(rb * ra));
            proptest::prop_assert!(max_diff(&stepwise, &composed) < 1e-12);
            proptest::prop_assert_eq!(stepwise.dc, c.dc);
            let back = rotate_sh(&rotate_sh(&c, &ra), &ra.transpose());
            proptest::prop_assert!(max_diff(&back, &c) < 1e-12);
        }
    }
}
