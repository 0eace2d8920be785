//! Lossless `IMGF` float images and 8-bit PNG previews.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, ParseErrorKind, Result};
use crate::render::Image;
use crate::splatter::ByteReader;

pub const IMGF_MAGIC: &[u8; 4] = b"IMGF";

pub fn image_to_bytes(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.data().len() * 4);
    out.extend_from_slice(IMGF_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn image_from_bytes(bytes: &[u8]) -> Result<Image> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != IMGF_MAGIC {
        return Err(Error::parse(0, ParseErrorKind::BadMagic));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| Error::parse(4, ParseErrorKind::Invalid("image too large".into())))?;
    if n.checked_mul(4).map_or(true, |b| b > r.remaining()) {
        return Err(Error::parse(bytes.len(), ParseErrorKind::Truncated));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::parse(at, ParseErrorKind::NonFinite));
        }
        data.push(v);
    }
    if r.remaining() != 0 {
        return Err(Error::parse(r.pos, ParseErrorKind::Invalid("trailing bytes".into())));
    }
    Image::from_data(h, w, data)
}

pub fn write_imgf(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, image_to_bytes(img))?;
    Ok(())
}

pub fn read_imgf(path: impl AsRef<Path>) -> Result<Image> {
    image_from_bytes(&std::fs::read(path)?)
}

/// Quantize to 8-bit sRGB-agnostic RGB (values are written as stored).
pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))
}
