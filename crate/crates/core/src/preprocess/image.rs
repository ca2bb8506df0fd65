//! Single-channel float images and 8-bit PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major single-channel image with gray levels on the 0..=255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(format!(
                "plane {height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_u8(height: usize, width: usize, pixels: &[u8]) -> Self {
        assert_eq!(pixels.len(), height * width);
        Plane {
            height,
            width,
            data: pixels.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Rounds half up and clamps to `[0, 255]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Half-open crop `[x0, x1) x [y0, y1)`; the window must lie inside.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Plane> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::shape(format!(
                "crop ({x0},{y0})-({x1},{y1}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x1]);
        }
        Plane::new(y1 - y0, x1 - x0, data)
    }

    /// Stacks planes of equal size into an `[N, 1, H, W]` tensor scaled to
    /// `[0, 1]`.
    pub fn batch_tensor(planes: &[&Plane]) -> Result<Tensor> {
        let first = planes
            .first()
            .ok_or_else(|| Error::shape("empty batch".to_string()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.height != h || p.width != w {
                return Err(Error::shape("batch planes differ in size".to_string()));
            }
            data.extend(p.data.iter().map(|&v| v / 255.0));
        }
        Tensor::new(vec![planes.len(), 1, h, w], data)
    }
}

/// `floor(v + 0.5)` clamped to the 8-bit range.
pub fn quantize(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn load_png(path: &Path) -> Result<Plane> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Plane::from_u8(h as usize, w as usize, gray.as_raw()))
}

pub fn save_png(path: &Path, plane: &Plane) -> Result<()> {
    save_gray_png(path, plane.height, plane.width, &plane.to_u8())
}

pub fn save_gray_png(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    image::save_buffer(
        path,
        pixels,
        width as u32,
        height as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_rgb_png(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    image::save_buffer(
        path,
        pixels,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}
