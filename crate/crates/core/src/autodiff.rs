//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes. Nodes are appended in
//! evaluation order, so the node index is already a topological order and
//! the graph cannot contain cycles.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::nn::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, Padding,
};
use crate::nn::norm::{batchnorm_backward, batchnorm_forward, BnSaved, Mode, RunningStats};
use crate::nn::pool::{maxpool2d_backward, maxpool2d_forward};
use crate::scalar::Scalar;
use crate::tensor::{self, ElementwiseOp, Tensor};

/// Lower clamp applied to predictions before taking logarithms.
pub const PREDICTION_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpTag {
    Leaf,
    Add,
    Sub,
    Mul,
    Concat,
    Sum,
    Relu,
    Sigmoid,
    Conv2d,
    ConvTranspose2d,
    MaxPool2d,
    BatchNorm,
    BinaryCrossEntropy,
}

/// Deliberate gradient corruption, for negative-control tests of the
/// finite-difference checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the kernel gradient of every convolution by 1.01.
    ConvKernelGrad,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Elementwise(ElementwiseOp, NodeId, NodeId),
    Concat(NodeId, NodeId),
    Sum(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: Padding,
    },
    ConvTranspose2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BnSaved<T>,
    },
    Bce {
        pred: NodeId,
        target: Tensor<T>,
        images: usize,
    },
}

impl<T> Op<T> {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::Elementwise(ElementwiseOp::Add, ..) => OpTag::Add,
            Op::Elementwise(ElementwiseOp::Sub, ..) => OpTag::Sub,
            Op::Elementwise(ElementwiseOp::Mul, ..) => OpTag::Mul,
            Op::Concat(..) => OpTag::Concat,
            Op::Sum(_) => OpTag::Sum,
            Op::Relu(_) => OpTag::Relu,
            Op::Sigmoid(_) => OpTag::Sigmoid,
            Op::Conv2d { .. } => OpTag::Conv2d,
            Op::ConvTranspose2d { .. } => OpTag::ConvTranspose2d,
            Op::MaxPool2d { .. } => OpTag::MaxPool2d,
            Op::BatchNorm { .. } => OpTag::BatchNorm,
            Op::Bce { .. } => OpTag::BinaryCrossEntropy,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Elementwise(_, a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Sum(x) | Op::Relu(x) | Op::Sigmoid(x) => vec![*x],
            Op::Conv2d { x, kernel, bias, .. } | Op::ConvTranspose2d { x, kernel, bias } => {
                let mut p = vec![*x, *kernel];
                p.extend(bias);
                p
            }
            Op::MaxPool2d { x, .. } => vec![*x],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Bce { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node does not require a gradient or does not reach the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn finite<T: Scalar>(op: &'static str, t: Tensor<T>) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric { op })
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> OpTag {
        self.nodes[id.0].op.tag()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A leaf whose gradient will be reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<NodeId> {
        let value = finite("leaf", value)?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<NodeId> {
        let value = finite(op_name, value)?;
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::elementwise(op, self.value(a), self.value(b))?;
        self.derived(op.name(), v, Op::Elementwise(op, a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::concat_channels(self.value(a), self.value(b))?;
        self.derived("concat_channels", v, Op::Concat(a, b))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).sum());
        self.derived("sum", v, Op::Sum(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = crate::nn::relu(self.value(x));
        self.derived("relu", v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = crate::nn::sigmoid(self.value(x));
        self.derived("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let v = conv2d_forward(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        self.derived(
            "conv2d",
            v,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                padding,
            },
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let v = conv_transpose2d_forward(self.value(x), self.value(kernel), bias.map(|b| self.value(b)))?;
        self.derived("conv_transpose2d", v, Op::ConvTranspose2d { x, kernel, bias })
    }

    pub fn maxpool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = maxpool2d_forward(self.value(x))?;
        self.derived("maxpool2d", v, Op::MaxPool2d { x, argmax })
    }

    /// Batch normalization; in training mode `stats` absorbs the batch moments.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut RunningStats<T>,
        mode: Mode,
    ) -> Result<NodeId> {
        let f = batchnorm_forward(self.value(x), self.value(gamma), self.value(beta), stats, mode)?;
        let id = self.derived(
            "batchnorm",
            f.out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: f.saved,
            },
        )?;
        if mode == Mode::Training {
            stats.update(&f.batch_mean, &f.batch_var);
        }
        Ok(id)
    }

    /// Batch loss: mean over the leading axis of per-image summed binary
    /// cross-entropy, predictions clamped to `[1e-7, 1 − 1e-7]`.
    pub fn binary_cross_entropy(&mut self, pred: NodeId, target: &Tensor<T>) -> Result<NodeId> {
        let p = self.value(pred);
        p.expect_same_shape("binary_cross_entropy", target)?;
        let images = if p.rank() > 1 { p.shape()[0] } else { 1 };
        let total = crate::train::loss::bce_sum(target.data(), p.data());
        let v = Tensor::scalar(total / T::from_usize(images).unwrap());
        self.derived(
            "binary_cross_entropy",
            v,
            Op::Bce {
                pred,
                target: target.clone(),
                images,
            },
        )
    }

    /// Hash of every data-dependent branch taken by the recorded pass: ReLU
    /// signs, max-pool winners and loss clamps. Two passes with the same
    /// signature evaluate the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let lo = T::from_f64_lossy(PREDICTION_CLAMP);
        let hi = T::one() - lo;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                Op::Bce { pred, .. } => {
                    for &v in self.nodes[pred.0].value.data() {
                        (v < lo, v > hi).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let shape = self.value(root).shape();
        if shape != [1] {
            return Err(Error::InvalidRoot(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, contribution) in self.local_grads(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                let contribution = finite("backward", contribution)?;
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Vector-Jacobian products of one node.
    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Elementwise(op, a, b) => match op {
                ElementwiseOp::Add => vec![(*a, g.clone()), (*b, g.clone())],
                ElementwiseOp::Sub => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
                ElementwiseOp::Mul => {
                    let ga = tensor::elementwise(ElementwiseOp::Mul, g, self.value(*b))?;
                    let gb = tensor::elementwise(ElementwiseOp::Mul, g, self.value(*a))?;
                    vec![(*a, ga), (*b, gb)]
                }
            },
            Op::Concat(a, b) => {
                let (ga, gb) = tensor::split_channels(g, self.value(*a).channels())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                vec![(*x, Tensor::full(shape, g.data()[0])?)]
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, Tensor::from_parts(xv.shape().to_vec(), data))]
            }
            Op::Sigmoid(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                vec![(*x, Tensor::from_parts(node.value.shape().to_vec(), data))]
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let grads = conv2d_backward(
                    self.value(*x),
                    self.value(*kernel),
                    *stride,
                    *padding,
                    g,
                    self.wants(*x),
                )?;
                self.pack_conv(*x, *kernel, *bias, grads)
            }
            Op::ConvTranspose2d { x, kernel, bias } => {
                let grads =
                    conv_transpose2d_backward(self.value(*x), self.value(*kernel), g, self.wants(*x))?;
                self.pack_conv(*x, *kernel, *bias, grads)
            }
            Op::MaxPool2d { x, argmax } => {
                vec![(*x, maxpool2d_backward(self.value(*x).shape(), argmax, g))]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let bg = batchnorm_backward(saved, self.value(*gamma), g);
                vec![(*x, bg.dx), (*gamma, bg.dgamma), (*beta, bg.dbeta)]
            }
            Op::Bce {
                pred,
                target,
                images,
            } => {
                let scale = g.data()[0] / T::from_usize(*images).unwrap();
                let p = self.value(*pred);
                let lo = T::from_f64_lossy(PREDICTION_CLAMP);
                let hi = T::one() - lo;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&pv, &y)| {
                        if pv < lo || pv > hi {
                            T::zero()
                        } else {
                            scale * (pv - y) / (pv * (T::one() - pv))
                        }
                    })
                    .collect();
                vec![(*pred, Tensor::from_parts(p.shape().to_vec(), data))]
            }
        };
        Ok(out)
    }

    fn pack_conv(
        &self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        grads: crate::nn::conv::ConvGrads<T>,
    ) -> Vec<(NodeId, Tensor<T>)> {
        let mut dkernel = grads.dkernel;
        if self.fault == Some(Fault::ConvKernelGrad) {
            let s = T::from_f64_lossy(1.01);
            dkernel.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        let mut out = vec![(kernel, dkernel)];
        if let Some(dx) = grads.dx {
            out.push((x, dx));
        }
        if let Some(b) = bias {
            out.push((b, grads.dbias));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_square_sum() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[2.0, -1.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, -2.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[1.0, 3.0])).unwrap();
        let a = tape.add(x, x).unwrap();
        let b = tape.add(a, x).unwrap();
        let s = tape.sum(b).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_gradient_splits_back() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::full(&[2, 2, 3], 1.0).unwrap()).unwrap();
        let b = tape.variable(Tensor::full(&[2, 2, 2], 2.0).unwrap()).unwrap();
        let c = tape.concat_channels(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor::full(&[2, 2, 3], 1.0).unwrap());
        assert_eq!(g.get(b).unwrap().shape(), &[2, 2, 2]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::InvalidRoot(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0])).unwrap();
        let c = tape.constant(t(&[2], &[5.0, 6.0])).unwrap();
        let m = tape.mul(x, c).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 6.0]);
    }

    #[test]
    fn overflow_aborts_the_op() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1], &[f64::MAX])).unwrap();
        assert!(matches!(tape.add(x, x), Err(Error::Numeric { op: "add" })));
        assert!(tape.leaf(t(&[1], &[f64::NAN]), true).is_err());
    }

    #[test]
    fn repeated_backward_is_bitwise_identical() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1, 2, 2, 1], &[0.3, -0.7, 1.1, 0.2])).unwrap();
        let k = tape.variable(t(&[2, 2, 1, 1], &[0.5, -0.25, 0.125, 1.0])).unwrap();
        let y = tape.conv2d(x, k, None, 1, Padding::Same).unwrap();
        let y = tape.sigmoid(y).unwrap();
        let s = tape.sum(y).unwrap();
        let g1 = tape.backward(s).unwrap();
        let g2 = tape.backward(s).unwrap();
        assert_eq!(g1.get(k).unwrap().data(), g2.get(k).unwrap().data());
        assert_eq!(g1.get(x).unwrap().data(), g2.get(x).unwrap().data());
    }

    #[test]
    fn parents_and_tags_are_recorded() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[1], &[1.0])).unwrap();
        let b = tape.variable(t(&[1], &[2.0])).unwrap();
        let c = tape.sub(a, b).unwrap();
        assert_eq!(tape.op(c), OpTag::Sub);
        assert_eq!(tape.parents(c), vec![a, b]);
        assert!(tape.parents(c).iter().all(|p| p.index() < c.index()));
    }
}
