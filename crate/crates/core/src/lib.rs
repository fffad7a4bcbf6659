//! MultiResUNet and U-Net segmentation networks with a small reverse-mode
//! autodiff engine, generic over `f32` and `f64`.

pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod data;
pub mod gradcheck;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
mod scalar;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{concat_channels, elementwise, split_channels, tensor_full, ElementwiseOp, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
