//! Training-time augmentation: box jitter, rotation, shear, flip and
//! intensity shift/scale, followed by the resize to model input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Plane;
use super::resize::resize_bilinear;
use crate::error::{Error, Result};

/// Smallest side a jittered crop may collapse to.
pub const MIN_CROP: usize = 8;

/// Crop window in pixels, half-open: columns `[xmin, xmax)`, rows `[ymin, ymax)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropBox {
    pub xmin: usize,
    pub ymin: usize,
    pub xmax: usize,
    pub ymax: usize,
}

impl CropBox {
    pub fn full(width: usize, height: usize) -> Self {
        CropBox {
            xmin: 0,
            ymin: 0,
            xmax: width,
            ymax: height,
        }
    }

    pub fn width(&self) -> usize {
        self.xmax.saturating_sub(self.xmin)
    }

    pub fn height(&self) -> usize {
        self.ymax.saturating_sub(self.ymin)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::Validation(format!("crop box {self:?} has no area")));
        }
        if self.xmax > width || self.ymax > height {
            return Err(Error::Validation(format!(
                "crop box {self:?} exceeds {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// Sampling ranges. Every draw is uniform and symmetric except the flip
/// (Bernoulli) and the scale (explicit interval).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationRanges {
    /// Each box coordinate moves by up to this fraction of the box extent.
    pub crop_jitter_frac: f32,
    pub rotation_deg: f32,
    pub shear: f32,
    pub hflip_prob: f32,
    /// Fraction of the 0..255 range.
    pub intensity_shift: f32,
    pub intensity_scale: (f32, f32),
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        AugmentationRanges {
            crop_jitter_frac: 0.05,
            rotation_deg: 10.0,
            shear: 0.1,
            hflip_prob: 0.5,
            intensity_shift: 0.05,
            intensity_scale: (0.9, 1.1),
        }
    }
}

impl AugmentationRanges {
    /// Ranges whose every draw is the identity.
    pub fn none() -> Self {
        AugmentationRanges {
            crop_jitter_frac: 0.0,
            rotation_deg: 0.0,
            shear: 0.0,
            hflip_prob: 0.0,
            intensity_shift: 0.0,
            intensity_scale: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.crop_jitter_frac,
            self.rotation_deg,
            self.shear,
            self.hflip_prob,
            self.intensity_shift,
            self.intensity_scale.0,
            self.intensity_scale.1,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite
            || self.crop_jitter_frac < 0.0
            || self.crop_jitter_frac >= 0.5
            || self.rotation_deg < 0.0
            || self.shear < 0.0
            || !(0.0..=1.0).contains(&self.hflip_prob)
            || self.intensity_shift < 0.0
            || self.intensity_scale.0 > self.intensity_scale.1
            || self.intensity_scale.0 < 0.0
        {
            return Err(Error::Config(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, seed: u64) -> AugmentationParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |r: f32| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let crop_jitter = [
            sym(self.crop_jitter_frac),
            sym(self.crop_jitter_frac),
            sym(self.crop_jitter_frac),
            sym(self.crop_jitter_frac),
        ];
        let rotation_deg = sym(self.rotation_deg);
        let shear_h = sym(self.shear);
        let shear_v = sym(self.shear);
        let intensity_shift = sym(self.intensity_shift);
        let (lo, hi) = self.intensity_scale;
        let intensity_scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let hflip = self.hflip_prob > 0.0 && rng.gen::<f32>() < self.hflip_prob;
        AugmentationParams {
            crop_jitter,
            rotation_deg,
            shear_h,
            shear_v,
            hflip,
            intensity_shift,
            intensity_scale,
            seed,
        }
    }
}

/// One concrete draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationParams {
    /// Offsets of xmin, ymin, xmax, ymax as fractions of the box extent.
    pub crop_jitter: [f32; 4],
    pub rotation_deg: f32,
    pub shear_h: f32,
    pub shear_v: f32,
    pub hflip: bool,
    pub intensity_shift: f32,
    pub intensity_scale: f32,
    /// Seed the draw came from; informational.
    pub seed: u64,
}

impl AugmentationParams {
    pub fn identity() -> Self {
        AugmentationParams {
            crop_jitter: [0.0; 4],
            rotation_deg: 0.0,
            shear_h: 0.0,
            shear_v: 0.0,
            hflip: false,
            intensity_shift: 0.0,
            intensity_scale: 1.0,
            seed: 0,
        }
    }

    fn has_warp(&self) -> bool {
        self.rotation_deg != 0.0 || self.shear_h != 0.0 || self.shear_v != 0.0
    }

    fn has_intensity(&self) -> bool {
        self.intensity_shift != 0.0 || self.intensity_scale != 1.0
    }
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Per-sample seed, a pure function of its coordinates.
pub fn sample_seed(global: u64, epoch: u64, index: u64) -> u64 {
    let mut h = splitmix(global);
    h = splitmix(h ^ epoch);
    splitmix(h ^ index)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counts crops that had to be rescued from collapsing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentWarnings {
    pub degenerate_boxes: usize,
}

/// Deterministic eval-time view: crop to the box, resize to `out x out`.
pub fn crop_resize(image: &Plane, bx: CropBox, out: usize) -> Result<Plane> {
    let crop = image.crop(bx.xmin, bx.ymin, bx.xmax, bx.ymax)?;
    Ok(resize_bilinear(&crop, out, out))
}

pub fn apply_augmentation(
    image: &Plane,
    bx: CropBox,
    params: &AugmentationParams,
    out: usize,
    warnings: &mut AugmentWarnings,
) -> Result<Plane> {
    bx.check_inside(image.width, image.height)?;
    let jittered = jitter_box(bx, params, image.width, image.height, warnings);
    let mut plane = image.crop(jittered.xmin, jittered.ymin, jittered.xmax, jittered.ymax)?;
    if params.has_warp() {
        plane = affine_warp(&plane, params.rotation_deg, params.shear_h, params.shear_v);
    }
    if params.hflip {
        hflip(&mut plane);
    }
    if params.has_intensity() {
        let (scale, shift) = (params.intensity_scale, params.intensity_shift * 255.0);
        for v in &mut plane.data {
            *v = (scale * *v + shift).clamp(0.0, 255.0);
        }
    }
    Ok(resize_bilinear(&plane, out, out))
}

fn jitter_box(
    bx: CropBox,
    params: &AugmentationParams,
    width: usize,
    height: usize,
    warnings: &mut AugmentWarnings,
) -> CropBox {
    if params.crop_jitter == [0.0; 4] {
        return bx;
    }
    let (bw, bh) = (bx.width() as f32, bx.height() as f32);
    let place = |v: usize, frac: f32, extent: f32, limit: usize| -> usize {
        (v as f32 + frac * extent)
            .round()
            .clamp(0.0, limit as f32) as usize
    };
    let j = params.crop_jitter;
    let mut out = CropBox {
        xmin: place(bx.xmin, j[0], bw, width),
        ymin: place(bx.ymin, j[1], bh, height),
        xmax: place(bx.xmax, j[2], bw, width),
        ymax: place(bx.ymax, j[3], bh, height),
    };
    if out.xmin >= out.xmax || out.ymin >= out.ymax {
        warnings.degenerate_boxes += 1;
        let (x0, x1) = rescue(out.xmin, out.xmax, width);
        let (y0, y1) = rescue(out.ymin, out.ymax, height);
        out = CropBox {
            xmin: x0,
            ymin: y0,
            xmax: x1,
            ymax: y1,
        };
    }
    out
}

/// Grows a collapsed interval to `MIN_CROP` around its midpoint, inside `[0, limit)`.
fn rescue(a: usize, b: usize, limit: usize) -> (usize, usize) {
    if a < b && b - a >= MIN_CROP {
        return (a, b);
    }
    let side = MIN_CROP.min(limit);
    let mid = (a + b) / 2;
    let start = mid.saturating_sub(side / 2).min(limit - side);
    (start, start + side)
}

/// Rotation composed with shear about the image center. Output pixels map
/// back to source coordinates through the inverse transform; samples outside
/// the source read as zero.
fn affine_warp(src: &Plane, rotation_deg: f32, shear_h: f32, shear_v: f32) -> Plane {
    let (s, c) = (rotation_deg as f64).to_radians().sin_cos();
    let (kh, kv) = (shear_h as f64, shear_v as f64);
    // Forward A = R * S with S = [[1, kh], [kv, 1]].
    let a = [
        [c - s * kv, c * kh - s],
        [s + c * kv, s * kh + c],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ];
    let cx = (src.width as f64 - 1.0) / 2.0;
    let cy = (src.height as f64 - 1.0) / 2.0;
    let mut out = Plane::filled(src.height, src.width, 0.0);
    for y in 0..src.height {
        let dy = y as f64 - cy;
        for x in 0..src.width {
            let dx = x as f64 - cx;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out.data[y * src.width + x] = sample_zero(src, sx, sy) as f32;
        }
    }
    out
}

fn sample_zero(src: &Plane, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |yy: f64, xx: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= src.width as f64 || yy >= src.height as f64 {
            0.0
        } else {
            src.data[yy as usize * src.width + xx as usize] as f64
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn hflip(p: &mut Plane) {
    for row in p.data.chunks_mut(p.width) {
        row.reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> Plane {
        Plane::new(h, w, (0..h * w).map(|i| ((i * 37) % 251) as f32).collect()).unwrap()
    }

    #[test]
    fn identity_is_crop_resize_bitwise() {
        let img = gradient(40, 50);
        let bx = CropBox {
            xmin: 3,
            ymin: 5,
            xmax: 45,
            ymax: 33,
        };
        let mut w = AugmentWarnings::default();
        let a = apply_augmentation(&img, bx, &AugmentationParams::identity(), 24, &mut w).unwrap();
        assert_eq!(a, crop_resize(&img, bx, 24).unwrap());
        let b = apply_augmentation(&img, bx, &AugmentationRanges::none().sample(9), 24, &mut w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flip_twice_restores() {
        let img = gradient(20, 30);
        let bx = CropBox::full(30, 20);
        let mut p = img.crop(0, 0, 30, 20).unwrap();
        hflip(&mut p);
        assert_ne!(p, img);
        hflip(&mut p);
        assert_eq!(p, img);
        let mut w = AugmentWarnings::default();
        let flipped = AugmentationParams {
            hflip: true,
            ..AugmentationParams::identity()
        };
        let once = apply_augmentation(&img, bx, &flipped, 20, &mut w).unwrap();
        let twice = apply_augmentation(
            &Plane::new(20, 30, {
                let mut q = img.clone();
                hflip(&mut q);
                q.data
            })
            .unwrap(),
            bx,
            &flipped,
            20,
            &mut w,
        )
        .unwrap();
        assert_ne!(once, twice);
        assert_eq!(twice, crop_resize(&img, bx, 20).unwrap());
    }

    #[test]
    fn intensity_scale_on_constant() {
        let img = Plane::filled(16, 16, 100.0);
        let params = AugmentationParams {
            intensity_scale: 1.1,
            ..AugmentationParams::identity()
        };
        let mut w = AugmentWarnings::default();
        let out = apply_augmentation(&img, CropBox::full(16, 16), &params, 16, &mut w).unwrap();
        for v in out.data {
            assert!((v - 110.0).abs() < 1e-4, "{v}");
        }
        let clipped = AugmentationParams {
            intensity_shift: 0.9,
            ..AugmentationParams::identity()
        };
        let out = apply_augmentation(&img, CropBox::full(16, 16), &clipped, 8, &mut w).unwrap();
        assert!(out.data.iter().all(|&v| v == 255.0));
    }

    #[test]
    fn rotation_by_180_reverses_plane() {
        let img = gradient(9, 11);
        let out = affine_warp(&img, 180.0, 0.0, 0.0);
        for (a, b) in out.data.iter().zip(img.data.iter().rev()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn warp_zero_fills_corners() {
        let img = Plane::filled(32, 32, 200.0);
        let out = affine_warp(&img, 10.0, 0.0, 0.0);
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(16, 16), 200.0);
    }

    #[test]
    fn collapsed_box_is_rescued_and_counted() {
        let img = gradient(32, 32);
        let bx = CropBox {
            xmin: 10,
            ymin: 10,
            xmax: 12,
            ymax: 12,
        };
        let params = AugmentationParams {
            crop_jitter: [0.4, 0.4, -0.4, -0.4],
            ..AugmentationParams::identity()
        };
        let mut w = AugmentWarnings::default();
        let out = apply_augmentation(&img, bx, &params, 8, &mut w).unwrap();
        assert_eq!(w.degenerate_boxes, 1);
        assert_eq!((out.height, out.width), (8, 8));
        // 2-pixel jitter of 0.4 rounds to 1, so the box collapses to zero width.
        let j = jitter_box(bx, &params, 32, 32, &mut AugmentWarnings::default());
        assert_eq!(j.width(), MIN_CROP);
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let r = AugmentationRanges::default();
        assert_eq!(r.sample(5), r.sample(5));
        assert_ne!(r.sample(5), r.sample(6));
        for seed in 0..200 {
            let p = r.sample(seed);
            assert!(p.crop_jitter.iter().all(|v| v.abs() <= 0.05));
            assert!(p.rotation_deg.abs() <= 10.0);
            assert!(p.shear_h.abs() <= 0.1 && p.shear_v.abs() <= 0.1);
            assert!(p.intensity_shift.abs() <= 0.05);
            assert!((0.9..=1.1).contains(&p.intensity_scale));
        }
        let flips = (0..1000).filter(|&s| r.sample(s).hflip).count();
        assert!((400..600).contains(&flips), "{flips}");
    }

    #[test]
    fn same_seed_same_image() {
        let img = gradient(48, 48);
        let bx = CropBox {
            xmin: 4,
            ymin: 4,
            xmax: 44,
            ymax: 40,
        };
        let p = AugmentationRanges::default().sample(sample_seed(1, 2, 3));
        let mut w = AugmentWarnings::default();
        let a = apply_augmentation(&img, bx, &p, 32, &mut w).unwrap();
        let b = apply_augmentation(&img, bx, &p, 32, &mut w).unwrap();
        assert_eq!(a, b);
        assert_ne!(sample_seed(1, 2, 3), sample_seed(1, 3, 2));
    }
}
