//! Dense row-major tensors and the `TNSR` binary container.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

const MAGIC: &[u8; 4] = b"TNSR";

/// Dense n-dimensional array, channels on the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    pub(crate) fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }

    pub(crate) fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("shape must have at least one axis".into()));
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return Err(Error::InvalidShape(format!("extent {pos} of {shape:?} is zero")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Shape/data pair already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last (channel) axis.
    pub fn channels(&self) -> usize {
        *self.shape.last().expect("tensors have at least one axis")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?} changes the element count", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape("dot", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidBatch("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape("stack", t)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Splits the leading axis back into individual tensors.
    pub fn unstack(&self) -> Vec<Tensor<T>> {
        let inner: Vec<usize> = if self.shape.len() > 1 {
            self.shape[1..].to_vec()
        } else {
            vec![1]
        };
        let step: usize = inner.iter().product();
        self.data
            .chunks(step)
            .map(|c| Tensor {
                shape: inner.clone(),
                data: c.to_vec(),
            })
            .collect()
    }

    /// Serializes into the `TNSR` container.
    pub fn write_tnsr<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_tnsr_bytes())?;
        Ok(())
    }

    pub fn to_tnsr_bytes(&self) -> Vec<u8> {
        let width = T::PRECISION.byte_width();
        let mut out = Vec::with_capacity(9 + 4 * self.shape.len() + width * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        out.push(T::PRECISION.flag());
        for &e in &self.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    /// Reads a `TNSR` container of either precision, converting to `T`.
    pub fn read_tnsr<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 9];
        r.read_exact(&mut head).map_err(truncated)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("missing TNSR magic".into()));
        }
        let rank = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
        let precision = Precision::from_flag(head[8])
            .ok_or_else(|| Error::Format(format!("unknown precision flag {:#04x}", head[8])))?;
        if rank == 0 || rank > 16 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let mut ext = vec![0u8; 4 * rank];
        r.read_exact(&mut ext).map_err(truncated)?;
        let shape: Vec<usize> = ext
            .chunks(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n = check_shape(&shape).map_err(|e| Error::Format(e.to_string()))?;
        let width = precision.byte_width();
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = match precision {
            Precision::Train => raw
                .chunks(4)
                .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                .collect(),
            Precision::Check => raw
                .chunks(8)
                .map(|c| T::from_f64_lossy(f64::read_le(c)))
                .collect(),
        };
        Ok(Tensor { shape, data })
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated TNSR stream".into())
    } else {
        Error::Io(e)
    }
}

/// Tensor filled with a constant.
pub fn tensor_full<T: Scalar>(shape: &[usize], value: T) -> Result<Tensor<T>> {
    Tensor::full(shape, value)
}

/// Shape-checked elementwise arithmetic without broadcasting.
pub fn elementwise<T: Scalar>(op: ElementwiseOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.expect_same_shape(op.name(), b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Concatenates along the last axis, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra != rb || a.shape[..ra - 1] != b.shape[..rb - 1] {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} and {:?} differ off the channel axis", a.shape, b.shape),
        ));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let rows = a.len() / ca;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        data.extend_from_slice(&a.data[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&b.data[r * cb..(r + 1) * cb]);
    }
    let mut shape = a.shape.clone();
    shape[ra - 1] = ca + cb;
    Ok(Tensor { shape, data })
}

/// Inverse of [`concat_channels`]: the first `first` channels, then the rest.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = t.channels();
    if first == 0 || first >= c {
        return Err(Error::shape(
            "split_channels",
            format!("cannot split {c} channels at {first}"),
        ));
    }
    let rest = c - first;
    let rows = t.len() / c;
    let mut a = Vec::with_capacity(rows * first);
    let mut b = Vec::with_capacity(rows * rest);
    for row in t.data.chunks(c) {
        a.extend_from_slice(&row[..first]);
        b.extend_from_slice(&row[first..]);
    }
    let mut sa = t.shape.clone();
    let mut sb = t.shape.clone();
    *sa.last_mut().unwrap() = first;
    *sb.last_mut().unwrap() = rest;
    Ok((Tensor { shape: sa, data: a }, Tensor { shape: sb, data: b }))
}
