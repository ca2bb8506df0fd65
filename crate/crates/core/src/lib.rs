//! Lightweight depthwise/pointwise convolutional networks for three-class
//! chest CT slice classification (normal, common pneumonia, novel
//! coronavirus pneumonia), with everything around them: Hounsfield-unit
//! windowing and augmentation, SGD-momentum training, clinical metrics and
//! occlusion-based auditing of trained models.

pub mod class;
pub mod error;
pub mod explain;
pub mod fixture;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod preprocess;
pub mod tape;
pub mod tensor;
pub mod train;

pub use class::Label;
pub use error::{Error, Result};
pub use tensor::Tensor;
