//! Raw 16-bit rasters.
//!
//! Layout: 4 magic bytes, height u32 LE, width u32 LE, then `height * width`
//! 16-bit LE samples in row-major order. `HU16` marks signed Hounsfield
//! values; `SC16` marks unsigned score maps.

use std::path::Path;

use crate::error::{Error, Result};

pub const HU_MAGIC: [u8; 4] = *b"HU16";
pub const SCORE_MAGIC: [u8; 4] = *b"SC16";
const HEADER_LEN: usize = 12;

/// One CT slice in Hounsfield units.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSlice {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<i16>,
}

impl RawSlice {
    pub fn new(height: usize, width: usize, pixels: Vec<i16>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::shape(format!(
                "slice {height}x{width} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(RawSlice {
            height,
            width,
            pixels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (height, width, body) = parse(&bytes, HU_MAGIC, path)?;
        let pixels = body
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        RawSlice::new(height, width, pixels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = self.pixels.iter().flat_map(|v| v.to_le_bytes());
        write(path, HU_MAGIC, self.height, self.width, body)
    }
}

pub fn write_score_raster(path: &Path, height: usize, width: usize, values: &[u16]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::shape("score raster size mismatch".to_string()));
    }
    write(
        path,
        SCORE_MAGIC,
        height,
        width,
        values.iter().flat_map(|v| v.to_le_bytes()),
    )
}

pub fn read_score_raster(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, body) = parse(&bytes, SCORE_MAGIC, path)?;
    let values = body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok((h, w, values))
}

fn parse<'a>(bytes: &'a [u8], magic: [u8; 4], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{}: header", path.display())));
    }
    if bytes[..4] != magic {
        return Err(Error::BadMagic(path.display().to_string()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let want = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::Truncated(format!("{}: absurd extent", path.display())))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != want {
        return Err(Error::Truncated(format!(
            "{}: expected {want} payload bytes, found {}",
            path.display(),
            body.len()
        )));
    }
    Ok((h, w, body))
}

fn write(
    path: &Path,
    magic: [u8; 4],
    height: usize,
    width: usize,
    body: impl Iterator<Item = u8>,
) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * height * width);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend(body);
    super::image::ensure_parent(path)?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.raw");
        let s = RawSlice::new(2, 3, vec![-1024, 0, 5, i16::MIN, i16::MAX, 40]).unwrap();
        s.write(&path).unwrap();
        assert_eq!(RawSlice::read(&path).unwrap(), s);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(RawSlice::read(&path), Err(Error::Truncated(_))));

        write_score_raster(&path, 1, 2, &[0, 65535]).unwrap();
        assert!(matches!(RawSlice::read(&path), Err(Error::BadMagic(_))));
        assert_eq!(read_score_raster(&path).unwrap(), (1, 2, vec![0, 65535]));
    }
}
