//! Neural-network layer kernels shared by both architectures.

pub mod activation;
pub mod conv;
pub mod norm;
pub mod pool;

pub use activation::{relu, sigmoid};
pub use conv::{conv2d, conv_param_count, conv_transpose2d, ConvParams, Padding};
pub use norm::{batchnorm, batchnorm_param_count, BatchNormParams, Mode, RunningStats};
pub use pool::maxpool2d;
