use serde::Serialize;

use crate::model::graph::ModelGraph;
use crate::model::params::{count_parameters, LayerCount};

/// JSON summary of a model graph.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub architecture: String,
    pub variant: String,
    pub rank: usize,
    pub input_shape: Vec<usize>,
    pub ubase: usize,
    pub alpha: f64,
    pub layers: Vec<LayerCount>,
    pub total_params: usize,
}

pub fn summarize(graph: &ModelGraph) -> ModelSummary {
    let report = count_parameters(graph);
    let mut input_shape = graph.input_extents.clone();
    input_shape.push(graph.in_channels);
    ModelSummary {
        architecture: graph.architecture.as_str().to_string(),
        variant: graph.variant.as_str().to_string(),
        rank: graph.rank,
        input_shape,
        ubase: graph.ubase,
        alpha: graph.alpha,
        layers: report.layers,
        total_params: report.total,
    }
}
