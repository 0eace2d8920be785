use crate::error::{Error, Result};
use crate::render::Image;

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Decibels; `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio for images in `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable filtering over the valid region only.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-region map back onto the
/// full grid.
fn filter_valid_adjoint(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for i in 0..SSIM_WINDOW {
                rows[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

/// Mean SSIM of interleaved RGB buffers and, if asked, its gradient with
/// respect to `a`.
pub(crate) fn ssim_raw(
    a: &[f64],
    b: &[f64],
    (h, w): (usize, usize),
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if a.len() != h * w * 3 || b.len() != a.len() {
        return Err(Error::DimensionMismatch(format!(
            "SSIM inputs of {} and {} values for {h}x{w}",
            a.len(),
            b.len()
        )));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.len()]);
    for ch in 0..3 {
        let x: Vec<f64> = a.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let n = mx.len();
        let inv_n = 1.0 / (3 * n) as f64;
        let mut acc = 0.0;
        let (mut g_mu, mut g_sxx, mut g_sxy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = 2.0 * ux * uy + c1;
            let a2 = 2.0 * (sxy[i] - ux * uy) + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = (sxx[i] - ux * ux) + (syy[i] - uy * uy) + c2;
            let s = (a1 * a2) / (b1 * b2);
            acc += s;
            if want_grad {
                let d = b1 * b2;
                g_mu[i] = inv_n
                    * ((2.0 * uy * a2 - 2.0 * uy * a1) * d - a1 * a2 * (2.0 * ux * b2 - 2.0 * ux * b1))
                    / (d * d);
                g_sxx[i] = -inv_n * s / b2;
                g_sxy[i] = inv_n * 2.0 * a1 / d;
            }
        }
        total += acc / n as f64;
        if let Some(g) = grad.as_mut() {
            let t_mu = filter_valid_adjoint(&g_mu, h, w, &k);
            let t_sxx = filter_valid_adjoint(&g_sxx, h, w, &k);
            let t_sxy = filter_valid_adjoint(&g_sxy, h, w, &k);
            for p in 0..h * w {
                g[p * 3 + ch] = t_mu[p] + 2.0 * x[p] * t_sxx[p] + y[p] * t_sxy[p];
            }
        }
    }
    Ok((total / 3.0, grad))
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid
/// region, averaged over the three channels. Dynamic range is 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let to64 = |img: &Image| img.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    Ok(ssim_raw(&to64(a), &to64(b), (a.height(), a.width()), false)?.0)
}

pub fn evaluate(a: &Image, b: &Image) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

/// Pixelwise mean of equally sized images.
pub fn mean_image(images: &[&Image]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("mean of zero images"))?;
    let mut acc = vec![0.0f64; first.data().len()];
    for img in images {
        first.same_dims(img)?;
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += f64::from(v);
        }
    }
    let n = images.len() as f64;
    Image::from_data(
        first.height(),
        first.width(),
        acc.iter().map(|v| (v / n) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
        Image::from_data(h, w, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    fn constant(h: usize, w: usize, v: f32) -> Image {
        Image::from_data(h, w, vec![v; h * w * 3]).unwrap()
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 16, 20);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_of_known_mse() {
        // Every value differs by 0.1, so MSE = 0.01.
        let a = constant(4, 4, 0.25);
        let b = constant(4, 4, 0.35);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_of_inverted_image_is_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 32, 32);
        let inv = Image::from_data(32, 32, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 0.2);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let (x, y) = (0.3f32, 0.6f32);
        let (x64, y64) = (f64::from(x), f64::from(y));
        let c1 = SSIM_K1 * SSIM_K1;
        let expected = (2.0 * x64 * y64 + c1) / (x64 * x64 + y64 * y64 + c1);
        let got = ssim(&constant(12, 15, x), &constant(12, 15, y)).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = constant(10, 30, 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, w) = (13, 14);
        let a: Vec<f64> = (0..h * w * 3).map(|_| rng.gen_range(0.2..0.8)).collect();
        let b: Vec<f64> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (_, g) = ssim_raw(&a, &b, (h, w), true).unwrap();
        let g = g.unwrap();
        let step = 1e-6;
        for i in (0..a.len()).step_by(17) {
            let mut p = a.clone();
            p[i] += step;
            let mut m = a.clone();
            m[i] -= step;
            let fd = (ssim_raw(&p, &b, (h, w), false).unwrap().0 - ssim_raw(&m, &b, (h, w), false).unwrap().0)
                / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn mismatched_dims() {
        assert!(psnr(&constant(4, 4, 0.0), &constant(4, 5, 0.0)).is_err());
    }

    #[test]
    fn mean_of_images() {
        let m = mean_image(&[&constant(2, 2, 0.0), &constant(2, 2, 1.0)]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.5));
    }
}
