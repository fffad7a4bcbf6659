//! Model graphs for MultiResUNet and the U-Net baseline.

pub mod build;
pub mod checkpoint;
pub mod exec;
pub mod graph;
pub mod params;
pub mod summary;

pub use build::{build_model, build_multiresunet, build_unet_baseline, ModelConfig, DEFAULT_UBASE};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use exec::{Network, Recorded};
pub use graph::{Architecture, GraphBuilder, Layer, LayerId, LayerKind, ModelGraph, SkipConnection};
pub use params::{count_parameters, ParamReport, ParamStore, Reconciliation};
pub use summary::{summarize, ModelSummary};
