//! Image loading, resizing, fold splitting and synthetic corpora.

mod dataset;
mod kfold;
mod netpbm;
mod resize;
mod synth;

pub use dataset::{load_dataset, load_sample, Dataset, Provenance, Sample, MASK_LOAD_THRESHOLD};
pub use kfold::{kfold_split, FoldSplit, DEFAULT_FOLDS};
pub use netpbm::{encode_netpbm, parse_netpbm, Raster};
pub use resize::{resize, Interpolation};
pub use synth::{synth_generate, Challenge, SynthSpec};
