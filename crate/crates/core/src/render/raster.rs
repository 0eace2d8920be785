use num_traits::Float;
use rayon::prelude::*;

use super::project::{prepare, Prepared};
use super::{
    check_frame, Image, Precision, RenderAux, RenderOptions, ALPHA_MAX, TILE_SIZE,
    TRANSMITTANCE_MIN,
};
use crate::error::Result;
use crate::types::{Camera, GaussianCloud};

#[derive(Clone, Copy)]
struct SplatT<T> {
    mx: T,
    my: T,
    a: T,
    b: T,
    c: T,
    opacity: T,
    color: [T; 3],
}

struct TileOut<T> {
    rgb: Vec<T>,
    transmittance: Vec<f64>,
    count: Vec<u32>,
}

#[inline]
fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float type")
}

fn render_tile<T: Float>(
    prep: &Prepared,
    splats: &[SplatT<T>],
    tile: usize,
    cam: &Camera,
) -> TileOut<T> {
    let tx = tile % prep.tiles_x;
    let ty = tile / prep.tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(cam.width);
    let y1 = (y0 + TILE_SIZE).min(cam.height);
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileOut {
        rgb: vec![T::zero(); n * 3],
        transmittance: vec![1.0; n],
        count: vec![0; n],
    };
    let list = &prep.tile_lists[tile];
    if list.is_empty() {
        return out;
    }
    let half = cast::<T>(0.5);
    let alpha_max = cast::<T>(ALPHA_MAX);
    let t_min = cast::<T>(TRANSMITTANCE_MIN);
    let mut p = 0;
    for y in y0..y1 {
        let py = cast::<T>(y as f64 + 0.5);
        for x in x0..x1 {
            let px = cast::<T>(x as f64 + 0.5);
            let mut trans = T::one();
            let mut rgb = [T::zero(); 3];
            let mut count = 0u32;
            for &k in list {
                let s = &splats[k as usize];
                let dx = px - s.mx;
                let dy = py - s.my;
                let power = -half * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
                let alpha = (s.opacity * power.exp()).min(alpha_max);
                let w = trans * alpha;
                for ch in 0..3 {
                    rgb[ch] = rgb[ch] + w * s.color[ch];
                }
                trans = trans * (T::one() - alpha);
                count += 1;
                if trans < t_min {
                    break;
                }
            }
            out.rgb[p * 3..p * 3 + 3].copy_from_slice(&rgb);
            out.transmittance[p] = trans.to_f64().unwrap_or(0.0);
            out.count[p] = count;
            p += 1;
        }
    }
    out
}

fn forward<T: Float + Send + Sync>(cloud: &GaussianCloud, cam: &Camera) -> Result<(Vec<T>, RenderAux)> {
    check_frame(cloud, cam)?;
    let prep = prepare(cloud, cam);
    let splats: Vec<SplatT<T>> = prep
        .splats
        .iter()
        .map(|s| SplatT {
            mx: cast(s.mean2d[0]),
            my: cast(s.mean2d[1]),
            a: cast(s.conic[0]),
            b: cast(s.conic[1]),
            c: cast(s.conic[2]),
            opacity: cast(s.opacity),
            color: s.color.map(cast),
        })
        .collect();
    let tiles: Vec<TileOut<T>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|t| render_tile(&prep, &splats, t, cam))
        .collect();

    let (w, h) = (cam.width, cam.height);
    let mut rgb = vec![T::zero(); w * h * 3];
    let mut aux = RenderAux {
        final_transmittance: vec![1.0; w * h],
        contrib_count: vec![0; w * h],
    };
    for (t, tile) in tiles.iter().enumerate() {
        let x0 = (t % prep.tiles_x) * TILE_SIZE;
        let y0 = (t / prep.tiles_x) * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(w);
        let y1 = (y0 + TILE_SIZE).min(h);
        let mut p = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                rgb[i * 3..i * 3 + 3].copy_from_slice(&tile.rgb[p * 3..p * 3 + 3]);
                aux.final_transmittance[i] = tile.transmittance[p];
                aux.contrib_count[i] = tile.count[p];
                p += 1;
            }
        }
    }
    Ok((rgb, aux))
}

fn to_image<T: Float>(h: usize, w: usize, rgb: &[T]) -> Image {
    let data = rgb
        .iter()
        .map(|v| v.to_f32().unwrap_or(0.0).clamp(0.0, 1.0))
        .collect();
    Image::from_data(h, w, data).expect("renderer produces finite pixels")
}

/// Render `cloud` through `cam` with 32-bit compositing.
pub fn rasterize(cloud: &GaussianCloud, cam: &Camera) -> Result<(Image, RenderAux)> {
    rasterize_with(cloud, cam, &RenderOptions::default())
}

pub fn rasterize_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    opts: &RenderOptions,
) -> Result<(Image, RenderAux)> {
    match opts.precision {
        Precision::F32 => {
            let (rgb, aux) = forward::<f32>(cloud, cam)?;
            Ok((to_image(cam.height, cam.width, &rgb), aux))
        }
        Precision::F64 => {
            let (rgb, aux) = forward::<f64>(cloud, cam)?;
            Ok((to_image(cam.height, cam.width, &rgb), aux))
        }
    }
}

/// 64-bit render returning the unrounded RGB values (row-major, interleaved).
pub fn rasterize_f64(cloud: &GaussianCloud, cam: &Camera) -> Result<(Vec<f64>, RenderAux)> {
    forward::<f64>(cloud, cam)
}
