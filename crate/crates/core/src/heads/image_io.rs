//! Image output formats: binary PPM (P6, 8-bit) and a raw f32 dump with a
//! 16-byte header (magic `CLIM`, then height/width/channels as u32).

use std::path::Path;

use crate::{Error, Result};

const CLIM_MAGIC: &[u8; 4] = b"CLIM";

/// Writes an RGB image (row-major, values clamped to `[0, 1]`) as binary PPM.
pub fn write_ppm(path: &Path, pixels: &[f32], height: usize, width: usize) -> Result<()> {
    if pixels.len() != height * width * 3 {
        return Err(Error::shape(
            "write_ppm",
            format!("{} values vs {}x{}x3", pixels.len(), height, width),
        ));
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &v in pixels {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes a raw little-endian f32 image with the 16-byte header.
pub fn write_clim(
    path: &Path,
    values: &[f32],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<()> {
    if values.len() != height * width * channels {
        return Err(Error::shape(
            "write_clim",
            format!("{} values vs {}x{}x{}", values.len(), height, width, channels),
        ));
    }
    let mut bytes = Vec::with_capacity(16 + values.len() * 4);
    bytes.extend_from_slice(CLIM_MAGIC);
    bytes.extend_from_slice(&(height as u32).to_le_bytes());
    bytes.extend_from_slice(&(width as u32).to_le_bytes());
    bytes.extend_from_slice(&(channels as u32).to_le_bytes());
    for &v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a raw f32 image dump: `(values, height, width, channels)`.
pub fn read_clim(path: &Path) -> Result<(Vec<f32>, usize, usize, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 16 || &bytes[0..4] != CLIM_MAGIC {
        return Err(Error::Format {
            format: "CLIM",
            offset: 0,
            detail: "missing or bad header".into(),
        });
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + h * w * c * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            format: "CLIM",
            offset: bytes.len().min(expected) as u64,
            detail: format!("expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|chunk| f32::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Ok((values, h, w, c))
}
