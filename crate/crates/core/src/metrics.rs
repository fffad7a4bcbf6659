//! Thresholding and the Jaccard index.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Tensor whose elements are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "mask shape {shape:?} does not hold {} elements",
                bits.len()
            )));
        }
        Ok(BinaryMask { shape, bits })
    }

    /// Accepts only tensors that are already strictly 0/1.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let mut bits = Vec::with_capacity(t.len());
        for &v in t.data() {
            if v == T::one() {
                bits.push(true);
            } else if v == T::zero() {
                bits.push(false);
            } else {
                return Err(Error::Domain(format!("mask element {v} is not 0 or 1")));
            }
        }
        Ok(BinaryMask {
            shape: t.shape().to_vec(),
            bits,
        })
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            self.shape.clone(),
            self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(BinaryMask {
            shape: self.shape.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        })
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "jaccard",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }
}

/// Foreground wherever the prediction is `>= threshold`.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, threshold: T) -> Result<BinaryMask> {
    let mut bits = Vec::with_capacity(pred.len());
    for &v in pred.data() {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::Domain(format!("prediction {v} outside [0, 1]")));
        }
        bits.push(v >= threshold);
    }
    Ok(BinaryMask {
        shape: pred.shape().to_vec(),
        bits,
    })
}

/// |A ∩ B| / |A ∪ B|; two empty masks agree perfectly.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Fraction rendered as a percentage string.
pub fn format_percent(v: f64) -> String {
    format!("{:.4}", 100.0 * v)
}

/// `(a − b) / b · 100`.
pub fn relative_improvement(a: f64, b: f64) -> f64 {
    (a - b) / b * 100.0
}

/// Mean and sample (`n − 1`) standard deviation; the deviation of a single
/// value is zero.
pub fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}
