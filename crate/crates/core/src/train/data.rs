//! In-memory samples and batch assembly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

use crate::class::Label;
use crate::error::{Error, Result};
use crate::preprocess::{
    apply_augmentation, crop_resize, load_png, sample_seed, AugmentWarnings, AugmentationRanges,
    CropBox, Manifest, Plane,
};
use crate::tensor::Tensor;

/// A decoded manifest record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub path: String,
    pub label: Label,
    pub image: Plane,
    pub crop: CropBox,
}

pub fn load_samples(manifest: &Manifest, data_dir: &Path) -> Result<Vec<Sample>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let image = load_png(&Manifest::resolve(data_dir, r))?;
            let crop = r.box_for(image.width, image.height)?;
            Ok(Sample {
                path: r.image_path.clone(),
                label: r.label,
                image,
                crop,
            })
        })
        .collect()
}

/// Eval view of each sample (box crop and resize) stacked into a batch.
pub fn eval_batch(samples: &[Sample], size: usize) -> Result<Tensor> {
    let planes: Vec<Plane> = samples
        .par_iter()
        .map(|s| crop_resize(&s.image, s.crop, size))
        .collect::<Result<_>>()?;
    Plane::batch_tensor(&planes.iter().collect::<Vec<_>>())
}

/// Augmented batch for the samples at `indices`. Each sample draws its
/// parameters from `sample_seed(seed, epoch, index)`, so the result does not
/// depend on how the work is spread over threads.
pub fn train_batch(
    samples: &[Sample],
    indices: &[usize],
    epoch: u32,
    seed: u64,
    ranges: &AugmentationRanges,
    size: usize,
) -> Result<(Tensor, Vec<usize>, AugmentWarnings)> {
    let views: Vec<(Plane, AugmentWarnings)> = indices
        .par_iter()
        .map(|&i| {
            let s = samples
                .get(i)
                .ok_or_else(|| Error::Usage(format!("sample index {i} out of range")))?;
            let params = ranges.sample(sample_seed(seed, epoch as u64, i as u64));
            let mut w = AugmentWarnings::default();
            let plane = apply_augmentation(&s.image, s.crop, &params, size, &mut w)?;
            Ok((plane, w))
        })
        .collect::<Result<_>>()?;
    let mut warnings = AugmentWarnings::default();
    for (_, w) in &views {
        warnings.degenerate_boxes += w.degenerate_boxes;
    }
    let batch = Plane::batch_tensor(&views.iter().map(|(p, _)| p).collect::<Vec<_>>())?;
    let labels = indices.iter().map(|&i| samples[i].label.index()).collect();
    Ok((batch, labels, warnings))
}

/// Sample order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(seed: u64, epoch: u32, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch as u64, u64::MAX));
    order.shuffle(&mut rng);
    order
}

/// Splits `items` into batches of `batch_size`, folding a trailing
/// single-item batch into the one before it. Train-mode batch norm cannot
/// normalize one sample once the deepest feature map is 1x1.
pub fn train_chunks<T>(items: &[T], batch_size: usize) -> Vec<&[T]> {
    let batch_size = batch_size.max(1);
    let mut chunks: Vec<&[T]> = items.chunks(batch_size).collect();
    if chunks.len() > 1 && chunks.last().map(|c| c.len()) == Some(1) {
        chunks.pop();
        let start = (chunks.len() - 1) * batch_size;
        *chunks.last_mut().unwrap() = &items[start..];
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_folded() {
        let items: Vec<u32> = (0..9).collect();
        let sizes: Vec<usize> = train_chunks(&items, 4).iter().map(|c| c.len()).collect();
        assert_eq!(sizes, [4, 5]);
        let sizes: Vec<usize> = train_chunks(&items[..8], 4).iter().map(|c| c.len()).collect();
        assert_eq!(sizes, [4, 4]);
        assert_eq!(train_chunks(&items[..1], 4).len(), 1);
        assert!(train_chunks::<u32>(&[], 4).is_empty());
    }

    #[test]
    fn permutation_is_pure() {
        let a = epoch_permutation(4, 2, 50);
        assert_eq!(a, epoch_permutation(4, 2, 50));
        assert_ne!(a, epoch_permutation(4, 3, 50));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn batches_match_across_thread_counts() {
        let samples: Vec<Sample> = (0..6)
            .map(|i| Sample {
                path: format!("{i}.png"),
                label: Label::from_index(i % 3).unwrap(),
                image: Plane::new(24, 24, (0..576).map(|v| ((v * (i + 3)) % 256) as f32).collect())
                    .unwrap(),
                crop: CropBox {
                    xmin: 2,
                    ymin: 1,
                    xmax: 22,
                    ymax: 23,
                },
            })
            .collect();
        let idx = [5, 0, 3, 2];
        let r = AugmentationRanges::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_batch(&samples, &idx, 1, 7, &r, 16).unwrap());
        let b = four.install(|| train_batch(&samples, &idx, 1, 7, &r, 16).unwrap());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, vec![2, 0, 0, 2]);
    }
}
