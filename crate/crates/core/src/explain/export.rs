//! Overlay PNGs and score rasters.

use std::path::Path;

use super::CriticalFactorMap;
use crate::error::{Error, Result};
use crate::preprocess::{save_rgb_png, write_score_raster, Plane};

/// Weight of pure red over the gray base inside the mask.
pub const OVERLAY_BLEND: f32 = 0.45;

/// Interleaved RGB bytes: gray base, masked pixels blended toward red.
/// Integer arithmetic with half-up rounding keeps the bytes reproducible.
pub fn overlay_pixels(image: &Plane, map: &CriticalFactorMap) -> Result<Vec<u8>> {
    if image.height != map.height || image.width != map.width {
        return Err(Error::shape("overlay image and map differ in size".to_string()));
    }
    let gray = image.to_u8();
    let mut out = Vec::with_capacity(gray.len() * 3);
    for (&g, &m) in gray.iter().zip(&map.mask) {
        if m {
            let g = g as u32;
            // 0.45 = 45/100: red = g*55/100 + 255*45/100, others g*55/100.
            let keep = g * 55;
            let r = ((keep + 255 * 45 + 50) / 100) as u8;
            let gb = ((keep + 50) / 100) as u8;
            out.extend_from_slice(&[r, gb, gb]);
        } else {
            out.extend_from_slice(&[g, g, g]);
        }
    }
    Ok(out)
}

pub fn export_overlay(image: &Plane, map: &CriticalFactorMap, path: &Path) -> Result<()> {
    save_rgb_png(path, map.height, map.width, &overlay_pixels(image, map)?)
}

/// Writes the score map as a 16-bit raster under `raster_path` with an
/// affine encoding `score = offset + value * scale`, and a sidecar text file
/// recording the encoding and the explanation summary.
pub fn export_score_map(map: &CriticalFactorMap, raster_path: &Path, sidecar_path: &Path) -> Result<()> {
    let (offset, scale) = encoding(&map.scores);
    let values: Vec<u16> = map
        .scores
        .iter()
        .map(|&s| {
            if scale == 0.0 {
                0
            } else {
                quantize_u16((s as f64 - offset) / scale)
            }
        })
        .collect();
    write_score_raster(raster_path, map.height, map.width, &values)?;
    std::fs::write(sidecar_path, score_sidecar(map)).map_err(|e| Error::io(sidecar_path, e))
}

fn encoding(scores: &[f32]) -> (f64, f64) {
    let lo = scores.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    (lo, if hi > lo { (hi - lo) / 65535.0 } else { 0.0 })
}

fn quantize_u16(v: f64) -> u16 {
    (v + 0.5).floor().clamp(0.0, 65535.0) as u16
}

pub fn score_sidecar(map: &CriticalFactorMap) -> String {
    let (offset, scale) = encoding(&map.scores);
    let mut s = format!(
        "# score = offset + value * scale\nheight={}\nwidth={}\noffset={offset:e}\nscale={scale:e}\n\
         predicted={}\nbase_probability={:.6}\nthreshold={}\nmax_score={:.6}\nmask_pixels={}\nregions={}\n",
        map.height,
        map.width,
        map.predicted.index(),
        map.base_probability,
        map.threshold,
        map.max_score(),
        map.mask_pixels(),
        map.regions.len()
    );
    for (i, r) in map.regions.iter().enumerate() {
        s.push_str(&format!(
            "region{i}={} {} {} {} pixels={} mean_score={:.6}\n",
            r.bbox.xmin, r.bbox.ymin, r.bbox.xmax, r.bbox.ymax, r.pixels, r.mean_score
        ));
    }
    s
}
