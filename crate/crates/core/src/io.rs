//! File formats: raw latent dumps and PNG helpers.
//!
//! Raw latent layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"ULATENT\0"
//! 8       4     format version (u32, currently 1)
//! 12      4     reserved, zero
//! 16      12    height, width, channels (u32 each)
//! 28      4*n   f32 values in row-major (row, col, channel) order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{GrayImage, RgbImage, RgbaImage};

use crate::error::{Error, Result};
use crate::grid::Latent;

pub const LATENT_MAGIC: &[u8; 8] = b"ULATENT\0";
pub const LATENT_VERSION: u32 = 1;

pub fn write_latent<W: Write>(mut w: W, latent: &Latent) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + 4 * latent.len());
    buf.extend_from_slice(LATENT_MAGIC);
    buf.extend_from_slice(&LATENT_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for dim in [latent.height(), latent.width(), latent.channels()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in latent.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_latent<R: Read>(mut r: R) -> Result<Latent> {
    let mut header = [0u8; 28];
    r.read_exact(&mut header)
        .map_err(|e| Error::format("latent file", format!("truncated header: {e}")))?;
    if &header[..8] != LATENT_MAGIC {
        return Err(Error::format("latent file", "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(8);
    if version != LATENT_VERSION {
        return Err(Error::format("latent file", format!("unsupported version {version}")));
    }
    let (h, w, c) = (word(16) as usize, word(20) as usize, word(24) as usize);
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format("latent file", "dimensions overflow"))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format("latent file", format!("truncated payload: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Latent::new(h, w, c, data)
}

pub fn save_latent(path: &Path, latent: &Latent) -> Result<()> {
    write_latent(fs::File::create(path)?, latent)
}

pub fn load_latent(path: &Path) -> Result<Latent> {
    read_latent(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn load_rgba(path: &Path) -> Result<RgbaImage> {
    Ok(image::open(path)?.to_rgba8())
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn save_rgba(path: &Path, img: &RgbaImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Min-max normalizes a row-major `rows x cols` map to 8-bit grayscale.
/// Constant maps render as mid-gray.
pub fn heatmap(values: &[f32], rows: usize, cols: usize) -> Result<GrayImage> {
    if values.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "heatmap {rows}x{cols} needs {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    let px: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span > 0.0 && span.is_finite() {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect();
    GrayImage::from_raw(cols as u32, rows as u32, px).ok_or_else(|| Error::shape("heatmap buffer"))
}
