//! Synthetic three-class images with planted patterns, for smoke tests and
//! demos. Class 0 is textured background only, class 1 adds one bright
//! 12x12 square, class 2 adds two bright vertical bars.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::class::Label;
use crate::error::Result;
use crate::preprocess::{save_png, CropBox, Manifest, Plane, SliceRecord};
use crate::train::Sample;

pub const BLOB_SIDE: usize = 12;
const BACKGROUND: (f32, f32) = (64.0, 102.0);
const BRIGHT: f32 = 230.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedImage {
    pub image: Plane,
    pub label: Label,
    /// Where the square sits, for class 1.
    pub blob: Option<CropBox>,
}

/// `n` images of `size x size` (size at least 32), labels cycling 0, 1, 2.
pub fn planted_images(n: usize, size: usize, seed: u64) -> Vec<PlantedImage> {
    assert!(size >= 32, "planted fixture needs at least 32x32 images");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = size / 8;
    (0..n)
        .map(|i| {
            let label = Label::from_index(i % 3).expect("label");
            let data = (0..size * size)
                .map(|_| rng.gen_range(BACKGROUND.0..BACKGROUND.1).round())
                .collect();
            let mut image = Plane::new(size, size, data).expect("plane");
            let mut blob = None;
            match label {
                Label::Normal => {}
                Label::Cp => {
                    let hi = size - margin - BLOB_SIDE;
                    let (x0, y0) = (rng.gen_range(margin..=hi), rng.gen_range(margin..=hi));
                    fill(&mut image, x0, y0, x0 + BLOB_SIDE, y0 + BLOB_SIDE);
                    blob = Some(CropBox {
                        xmin: x0,
                        ymin: y0,
                        xmax: x0 + BLOB_SIDE,
                        ymax: y0 + BLOB_SIDE,
                    });
                }
                Label::Ncp => {
                    let bar = size / 16;
                    let gap = 2 * bar;
                    let x0 = rng.gen_range(margin..=size - margin - 2 * bar - gap);
                    fill(&mut image, x0, margin, x0 + bar, size - margin);
                    fill(&mut image, x0 + bar + gap, margin, x0 + 2 * bar + gap, size - margin);
                }
            }
            PlantedImage { image, label, blob }
        })
        .collect()
}

fn fill(p: &mut Plane, x0: usize, y0: usize, x1: usize, y1: usize) {
    for y in y0..y1 {
        for x in x0..x1 {
            p.set(y, x, BRIGHT);
        }
    }
}

pub fn planted_samples(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    planted_images(n, size, seed)
        .into_iter()
        .enumerate()
        .map(|(i, p)| Sample {
            path: format!("img_{i:03}.png"),
            label: p.label,
            crop: CropBox::full(p.image.width, p.image.height),
            image: p.image,
        })
        .collect()
}

/// Writes the images as PNGs under `dir` plus a `train.txt` manifest listing
/// them (one patient per image).
pub fn write_planted_dataset(dir: &Path, n: usize, size: usize, seed: u64) -> Result<Manifest> {
    let mut records = Vec::new();
    for (i, p) in planted_images(n, size, seed).into_iter().enumerate() {
        let name = format!("img_{i:03}.png");
        save_png(&dir.join(&name), &p.image)?;
        records.push(SliceRecord {
            image_path: name,
            label: p.label,
            patient_id: format!("toy-{i:03}"),
            crop: None,
        });
    }
    let manifest = Manifest::new(Some(crate::preprocess::Split::Train), records);
    manifest.write(&dir.join("train.txt"))?;
    Ok(manifest)
}
