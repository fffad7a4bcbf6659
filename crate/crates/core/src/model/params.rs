//! Parameter counting and materialized parameter storage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::graph::{LayerId, LayerKind, ModelGraph};
use crate::nn::RunningStats;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub output_channels: usize,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub layers: Vec<LayerCount>,
    pub total: usize,
}

impl ParamReport {
    /// Sum over layers whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .map(|l| l.params)
            .sum()
    }
}

/// Per-layer closed-form counts; never materializes tensors.
pub fn count_parameters(graph: &ModelGraph) -> ParamReport {
    let layers: Vec<LayerCount> = graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| LayerCount {
            name: l.name.clone(),
            kind: l.kind.type_name().to_string(),
            output_channels: l.channels,
            params: graph.layer_params(LayerId(i)),
        })
        .collect();
    let total = layers.iter().map(|l| l.params).sum();
    ParamReport { layers, total }
}

/// Comparison of a counted total against a published reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconciliation {
    pub target: usize,
    pub counted: usize,
    pub delta: i64,
    pub relative: f64,
    /// Per block (top-level name prefix) parameter totals.
    pub groups: Vec<(String, usize)>,
}

impl Reconciliation {
    pub fn new(report: &ParamReport, target: usize) -> Self {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for l in &report.layers {
            if l.params == 0 {
                continue;
            }
            let group = l.name.split('/').next().unwrap_or(&l.name).to_string();
            match groups.last_mut() {
                Some((g, n)) if *g == group => *n += l.params,
                _ => groups.push((group, l.params)),
            }
        }
        let delta = report.total as i64 - target as i64;
        Reconciliation {
            target,
            counted: report.total,
            delta,
            relative: delta as f64 / target as f64,
            groups,
        }
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.relative.abs() <= tolerance
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "counted {} vs reference {}: delta {:+} ({:+.4}%)\n",
            self.counted,
            self.target,
            self.delta,
            100.0 * self.relative
        );
        for (g, n) in &self.groups {
            s.push_str(&format!("  {g:<14} {n:>10}\n"));
        }
        s
    }
}

/// Where a layer's tensors live inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    None,
    Conv { kernel: usize, bias: usize },
    BatchNorm { gamma: usize, beta: usize, stats: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Trainable tensors and batch-norm running statistics of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub(crate) params: Vec<NamedTensor<T>>,
    pub(crate) stats: Vec<(String, RunningStats<T>)>,
    pub(crate) slots: Vec<Slot>,
}

impl<T: Scalar> ParamStore<T> {
    /// Glorot-uniform kernels, zero biases, unit γ, zero β.
    pub fn init(graph: &ModelGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = graph.rank as u32;
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut slots = Vec::with_capacity(graph.layers().len());
        for (i, layer) in graph.layers().iter().enumerate() {
            let cin = layer.inputs.first().map(|&p| graph.layer(p).channels);
            let conv_shape = match layer.kind {
                LayerKind::Conv { kernel, filters } => Some((kernel, filters)),
                LayerKind::ConvTranspose { filters } => Some((2, filters)),
                _ => None,
            };
            let slot = match (conv_shape, &layer.kind) {
                (Some((k, filters)), _) => {
                    let cin = cin.expect("conv layers have an input");
                    let taps = k.pow(rank);
                    let limit = (6.0 / ((taps * cin + taps * filters) as f64)).sqrt();
                    let mut shape = vec![k; graph.rank];
                    shape.extend([cin, filters]);
                    let n = taps * cin * filters;
                    let data = (0..n)
                        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
                        .collect();
                    params.push(NamedTensor {
                        name: format!("{}.kernel", layer.name),
                        tensor: Tensor::new(shape, data)?,
                    });
                    params.push(NamedTensor {
                        name: format!("{}.bias", layer.name),
                        tensor: Tensor::zeros(&[filters])?,
                    });
                    Slot::Conv {
                        kernel: params.len() - 2,
                        bias: params.len() - 1,
                    }
                }
                (None, LayerKind::BatchNorm) => {
                    let c = layer.channels;
                    params.push(NamedTensor {
                        name: format!("{}.gamma", layer.name),
                        tensor: Tensor::full(&[c], T::one())?,
                    });
                    params.push(NamedTensor {
                        name: format!("{}.beta", layer.name),
                        tensor: Tensor::zeros(&[c])?,
                    });
                    stats.push((layer.name.clone(), RunningStats::new(c)?));
                    Slot::BatchNorm {
                        gamma: params.len() - 2,
                        beta: params.len() - 1,
                        stats: stats.len() - 1,
                    }
                }
                _ => Slot::None,
            };
            let store_count = match slot {
                Slot::None => 0,
                Slot::Conv { kernel, bias } => params[kernel].tensor.len() + params[bias].tensor.len(),
                Slot::BatchNorm { gamma, beta, .. } => params[gamma].tensor.len() + params[beta].tensor.len(),
            };
            if store_count != graph.layer_params(LayerId(i)) {
                return Err(Error::Config(format!(
                    "layer {} materialized {store_count} parameters, formula says {}",
                    layer.name,
                    graph.layer_params(LayerId(i))
                )));
            }
            slots.push(slot);
        }
        Ok(ParamStore { params, stats, slots })
    }

    pub fn trainable(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.stats
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Element count of every trainable tensor, summed.
    pub fn trainable_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}
