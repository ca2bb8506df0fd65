//! Layer primitives: forward passes and their vector-Jacobian products.

mod basic;
mod conv;
mod norm;

pub use basic::{
    cross_entropy, cross_entropy_backward, dense, dense_backward, global_avg_pool,
    global_avg_pool_backward, relu, relu_backward, softmax, softmax_backward,
    softmax_cross_entropy, softmax_cross_entropy_backward, DenseGrads, LOG_CLAMP,
};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvGrads, ConvParams,
    Geometry, Padding,
};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_eval_backward, batch_norm_forward, BatchNormForward,
    BatchNormGrads, BatchNormParams, BatchStats, Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
