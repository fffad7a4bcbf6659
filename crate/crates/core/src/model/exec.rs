//! Execution of rank-2 model graphs on the autodiff tape.

use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::graph::{LayerKind, ModelGraph};
use crate::model::params::{ParamStore, Slot};
use crate::nn::{Mode, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A model graph together with its weights.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub graph: ModelGraph,
    pub params: ParamStore<T>,
}

/// Tape nodes produced by [`Network::record`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub output: NodeId,
    /// One leaf per trainable tensor, in [`ParamStore::trainable`] order.
    pub params: Vec<NodeId>,
}

impl Recorded {
    /// Gradients of the trainable tensors, in store order.
    pub fn param_grads<'a, T: Scalar>(&self, grads: &'a Gradients<T>) -> Result<Vec<&'a Tensor<T>>> {
        self.params
            .iter()
            .map(|&id| {
                grads
                    .get(id)
                    .ok_or_else(|| Error::Config("a trainable parameter received no gradient".into()))
            })
            .collect()
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(graph: ModelGraph, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&graph, seed)?;
        Ok(Network { graph, params })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if self.graph.rank != 2 {
            return Err(Error::UnsupportedRank(self.graph.rank));
        }
        let s = x.shape();
        let want = [self.graph.input_extents[0], self.graph.input_extents[1], self.graph.in_channels];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::shape(
                "forward",
                format!("input {s:?} does not match [N, {}, {}, {}]", want[0], want[1], want[2]),
            ));
        }
        Ok(())
    }

    /// Records a forward pass of the batch held by node `x`.
    ///
    /// Training mode uses batch statistics and updates the running ones.
    /// With `track_params` the weights become gradient-carrying leaves.
    pub fn record(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode, track_params: bool) -> Result<Recorded> {
        self.check_input(tape.value(x))?;
        let params: Vec<NodeId> = self
            .params
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), track_params))
            .collect::<Result<_>>()?;
        let mut nodes: Vec<NodeId> = Vec::with_capacity(self.graph.layers().len());
        for (i, layer) in self.graph.layers().iter().enumerate() {
            let input = |k: usize| nodes[layer.inputs[k].index()];
            let slot = self.params.slots[i];
            let id = match (&layer.kind, slot) {
                (LayerKind::Input, _) => x,
                (LayerKind::Conv { .. }, Slot::Conv { kernel, bias }) => {
                    tape.conv2d(input(0), params[kernel], Some(params[bias]), 1, Padding::Same)?
                }
                (LayerKind::ConvTranspose { .. }, Slot::Conv { kernel, bias }) => {
                    tape.conv_transpose2d(input(0), params[kernel], Some(params[bias]))?
                }
                (LayerKind::BatchNorm, Slot::BatchNorm { gamma, beta, stats }) => {
                    let running = &mut self.params.stats[stats].1;
                    tape.batchnorm(input(0), params[gamma], params[beta], running, mode)?
                }
                (LayerKind::Relu, _) => tape.relu(input(0))?,
                (LayerKind::Sigmoid, _) => tape.sigmoid(input(0))?,
                (LayerKind::MaxPool, _) => tape.maxpool2d(input(0))?,
                (LayerKind::Add, _) => tape.add(input(0), input(1))?,
                (LayerKind::Concat, _) => tape.concat_channels(input(0), input(1))?,
                (kind, slot) => {
                    return Err(Error::Config(format!(
                        "layer {} ({kind:?}) has mismatched parameter slot {slot:?}",
                        layer.name
                    )))
                }
            };
            nodes.push(id);
        }
        Ok(Recorded {
            output: nodes[self.graph.output().index()],
            params,
        })
    }

    /// Forward pass of an `[N, H, W, C]` batch; returns `[N, H, W, 1]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone())?;
        let rec = self.record(&mut tape, xn, mode, false)?;
        Ok(tape.value(rec.output).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build::{build_multiresunet, build_unet_baseline, ModelConfig};

    #[test]
    fn zeros_in_probabilities_out() {
        let g = build_multiresunet(&ModelConfig::new(2, &[16, 16], 3).with_ubase(8)).unwrap();
        let mut net = Network::<f32>::new(g, 1).unwrap();
        let x = Tensor::zeros(&[2, 16, 16, 3]).unwrap();
        let y = net.forward(&x, Mode::Inference).unwrap();
        assert_eq!(y.shape(), &[2, 16, 16, 1]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn output_matches_input_extent() {
        let g = build_unet_baseline(&ModelConfig::new(2, &[64, 64], 3).with_ubase(4)).unwrap();
        let mut net = Network::<f32>::new(g, 2).unwrap();
        let x = Tensor::full(&[1, 64, 64, 3], 0.5).unwrap();
        assert_eq!(net.forward(&x, Mode::Inference).unwrap().shape(), &[1, 64, 64, 1]);
    }

    #[test]
    fn inference_is_deterministic() {
        let g = build_multiresunet(&ModelConfig::new(2, &[16, 16], 1).with_ubase(8)).unwrap();
        let mut net = Network::<f32>::new(g, 3).unwrap();
        let x = Tensor::new(vec![1, 16, 16, 1], (0..256).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
        let a = net.forward(&x, Mode::Inference).unwrap();
        let b = net.forward(&x, Mode::Inference).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rank3_execution_is_unsupported() {
        let g = build_multiresunet(&ModelConfig::new(3, &[16, 16, 16], 1).with_ubase(8)).unwrap();
        let mut net = Network::<f32>::new(g, 0).unwrap();
        let x = Tensor::zeros(&[1, 16, 16, 16, 1]).unwrap();
        assert!(matches!(net.forward(&x, Mode::Inference), Err(Error::UnsupportedRank(3))));
    }

    #[test]
    fn wrong_input_shape() {
        let g = build_multiresunet(&ModelConfig::new(2, &[16, 16], 3).with_ubase(8)).unwrap();
        let mut net = Network::<f32>::new(g, 0).unwrap();
        let x = Tensor::zeros(&[1, 16, 16, 1]).unwrap();
        assert!(matches!(net.forward(&x, Mode::Inference), Err(Error::Shape { .. })));
    }
}
