//! Occlusion-based auditing of a trained network.
//!
//! A patch slides over the input; at each position it is filled (with the
//! image mean or zero) and the drop in the predicted class probability is
//! recorded. Each pixel's score is the average drop over the patches that
//! cover it. Pixels scoring at least a fraction of the maximum form the
//! critical-factor mask.

mod export;

pub use export::{export_overlay, export_score_map, overlay_pixels, score_sidecar, OVERLAY_BLEND};

use crate::class::Label;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::preprocess::{CropBox, Plane};
use crate::train::argmax;

pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fill {
    Zero,
    Mean,
}

impl Fill {
    pub fn as_str(self) -> &'static str {
        match self {
            Fill::Zero => "zero",
            Fill::Mean => "mean",
        }
    }
}

impl std::str::FromStr for Fill {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Fill::Zero),
            "mean" => Ok(Fill::Mean),
            _ => Err(Error::Config(format!("fill must be zero or mean, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OcclusionSpec {
    pub patch: usize,
    pub stride: usize,
    pub fill: Fill,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec {
            patch: 32,
            stride: 16,
            fill: Fill::Mean,
        }
    }
}

impl OcclusionSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch || self.patch > height.min(width) {
            return Err(Error::Config(format!(
                "occlusion needs 1 <= stride <= patch <= image extent, got stride {} patch {} on {height}x{width}",
                self.stride, self.patch
            )));
        }
        Ok(())
    }
}

/// Patch origins along one axis: every `stride` step plus a final position
/// flush with the far edge, so every pixel is covered.
pub fn patch_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// A 4-connected component of the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub bbox: CropBox,
    pub pixels: usize,
    pub mean_score: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalFactorMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f32>,
    pub mask: Vec<bool>,
    pub regions: Vec<Region>,
    pub predicted: Label,
    pub base_probability: f32,
    pub threshold: f32,
}

impl CriticalFactorMap {
    pub fn max_score(&self) -> f32 {
        self.scores.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mask_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Intersection over union of the mask with a box.
    pub fn iou(&self, b: CropBox) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                let inside = x >= b.xmin && x < b.xmax && y >= b.ymin && y < b.ymax;
                let m = self.mask[y * self.width + x];
                inter += (m && inside) as usize;
                union += (m || inside) as usize;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Scores `image` (already at the network input size, 0..255 scale) and
/// extracts critical factors at `threshold`.
pub fn explain(
    net: &Network,
    image: &Plane,
    spec: &OcclusionSpec,
    threshold: f32,
    batch_size: usize,
) -> Result<CriticalFactorMap> {
    let (scores, predicted, base) = occlusion_map(net, image, spec, batch_size)?;
    let (mask, regions) = extract_critical_factors(&scores, image.height, image.width, threshold)?;
    Ok(CriticalFactorMap {
        height: image.height,
        width: image.width,
        scores,
        mask,
        regions,
        predicted,
        base_probability: base,
        threshold,
    })
}

/// Per-pixel occlusion scores, the predicted class and its clean probability.
pub fn occlusion_map(
    net: &Network,
    image: &Plane,
    spec: &OcclusionSpec,
    batch_size: usize,
) -> Result<(Vec<f32>, Label, f32)> {
    let size = net.input_size();
    if image.height != size || image.width != size {
        return Err(Error::shape(format!(
            "image is {}x{}, network expects {size}x{size}",
            image.height, image.width
        )));
    }
    spec.validate(image.height, image.width)?;
    let clean = net.predict(Plane::batch_tensor(&[image])?)?;
    let cls = argmax(clean.data());
    let base = clean.data()[cls];
    let fill = match spec.fill {
        Fill::Zero => 0.0,
        Fill::Mean => image.mean(),
    };
    let ys = patch_origins(image.height, spec.patch, spec.stride);
    let xs = patch_origins(image.width, spec.patch, spec.stride);
    let positions: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect();

    let mut drops = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(batch_size.max(1)) {
        let occluded: Vec<Plane> = chunk
            .iter()
            .map(|&(y0, x0)| {
                let mut p = image.clone();
                for y in y0..y0 + spec.patch {
                    p.data[y * p.width + x0..y * p.width + x0 + spec.patch].fill(fill);
                }
                p
            })
            .collect();
        let probs = net.predict(Plane::batch_tensor(&occluded.iter().collect::<Vec<_>>())?)?;
        drops.extend(probs.data().chunks(3).map(|row| base as f64 - row[cls] as f64));
    }

    let n = image.height * image.width;
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (&(y0, x0), &d) in positions.iter().zip(&drops) {
        for y in y0..y0 + spec.patch {
            for x in x0..x0 + spec.patch {
                sum[y * image.width + x] += d;
                count[y * image.width + x] += 1;
            }
        }
    }
    let scores = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| (s / c as f64) as f32)
        .collect();
    Ok((scores, Label::from_index(cls)?, base))
}

/// Mask of pixels scoring at least `threshold * max` (empty when the max is
/// not positive) and its 4-connected regions by descending mean score.
pub fn extract_critical_factors(
    scores: &[f32],
    height: usize,
    width: usize,
    threshold: f32,
) -> Result<(Vec<bool>, Vec<Region>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    if scores.len() != height * width {
        return Err(Error::shape("score map does not match its extents".to_string()));
    }
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(max > 0.0) {
        return Ok((vec![false; scores.len()], Vec::new()));
    }
    let cut = threshold * max;
    let mask: Vec<bool> = scores.iter().map(|&s| s >= cut).collect();

    let mut seen = vec![false; mask.len()];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut pixels, mut total) = (0usize, 0.0f64);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / width, i % width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            pixels += 1;
            total += scores[i] as f64;
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        regions.push(Region {
            bbox: CropBox {
                xmin: x0,
                ymin: y0,
                xmax: x1,
                ymax: y1,
            },
            pixels,
            mean_score: (total / pixels as f64) as f32,
        });
    }
    // Stable sort keeps scan order for equal means.
    regions.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score));
    Ok((mask, regions))
}
