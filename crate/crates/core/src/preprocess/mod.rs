//! Raw CT slices to model-ready images.

mod augment;
mod image;
mod manifest;
mod raster;
mod resize;
mod split;
mod window;

pub use augment::{
    apply_augmentation, crop_resize, sample_seed, AugmentWarnings, AugmentationParams,
    AugmentationRanges, CropBox, MIN_CROP,
};
pub use image::{load_png, quantize, save_gray_png, save_png, save_rgb_png, Plane};
pub use manifest::{load_manifest, Manifest, SliceRecord, Split};
pub use raster::{read_score_raster, write_score_raster, RawSlice, HU_MAGIC, SCORE_MAGIC};
pub use resize::resize_bilinear;
pub use split::{count_split, validate_split, SplitCounts, SplitReport};
pub use window::{hu_window, window_slice, HuWindow};
