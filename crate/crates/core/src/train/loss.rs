//! Binary cross-entropy, per image and per batch.

use crate::autodiff::PREDICTION_CLAMP;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// −(y·ln ŷ + (1−y)·ln(1−ŷ)) with ŷ clamped to `[1e-7, 1 − 1e-7]`.
pub(crate) fn bce_term<T: Scalar>(y: T, p: T) -> T {
    let lo = T::from_f64_lossy(PREDICTION_CLAMP);
    let p = p.max(lo).min(T::one() - lo);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Σ of [`bce_term`] over all pixels.
pub(crate) fn bce_sum<T: Scalar>(target: &[T], pred: &[T]) -> T {
    target.iter().zip(pred).fold(T::zero(), |acc, (&y, &p)| acc + bce_term(y, p))
}

/// Summed pixelwise cross-entropy of one predicted mask.
pub fn bce_image<T: Scalar>(mask: &Tensor<T>, pred: &Tensor<T>) -> Result<T> {
    mask.expect_same_shape("bce_image", pred)?;
    Ok(bce_sum(mask.data(), pred.data()))
}

/// Mean of [`bce_image`] over a batch of `(mask, prediction)` pairs.
pub fn batch_loss<T: Scalar>(batch: &[(&Tensor<T>, &Tensor<T>)]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("batch loss over zero images".into()));
    }
    let mut total = T::zero();
    for (mask, pred) in batch {
        total += bce_image(mask, pred)?;
    }
    Ok(total / T::from_usize(batch.len()).unwrap())
}
