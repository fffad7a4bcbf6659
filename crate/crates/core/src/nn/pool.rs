//! 2×2, stride-2 max pooling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pooled output plus, per output element, the flat input index that won.
pub(crate) fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("maxpool2d", format!("input must be [N,H,W,C], got {s:?}")));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial extents {h}x{w} must be even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = x.data();
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * i) * w + 2 * j) * c + ch;
                    let mut best = data[best_idx];
                    // row-major scan of the window; strict > keeps the first maximum
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * i + dy) * w + 2 * j + dx) * c + ch;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, oh, ow, c], out), argmax))
}

pub(crate) fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx[idx] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Forward-only max pooling.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2d_forward(x).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maximum() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::full(&[2, 4, 6, 3], 1.25f32).unwrap();
        let y = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn ties_route_to_first_in_scan_order() {
        let x = Tensor::full(&[1, 2, 2, 1], 0.0f64).unwrap();
        let (_, arg) = maxpool2d_forward(&x).unwrap();
        assert_eq!(arg, vec![0]);
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0f64, 5.0, 5.0, 2.0]).unwrap();
        let (_, arg) = maxpool2d_forward(&x).unwrap();
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn gradient_has_one_entry_per_window() {
        let data: Vec<f64> = (0..32).map(|i| ((i * 37) % 32) as f64).collect();
        let x = Tensor::new(vec![1, 4, 4, 2], data).unwrap();
        let (y, arg) = maxpool2d_forward(&x).unwrap();
        let dx = maxpool2d_backward(x.shape(), &arg, &Tensor::full(y.shape(), 1.0).unwrap());
        assert_eq!(dx.sum(), 8.0);
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..2 {
                    let mut ones = 0;
                    for dy in 0..2 {
                        for dxx in 0..2 {
                            let v = dx.data()[(((2 * i + dy) * 4) + 2 * j + dxx) * 2 + c];
                            assert!(v == 0.0 || v == 1.0);
                            ones += v as usize;
                        }
                    }
                    assert_eq!(ones, 1);
                }
            }
        }
    }

    #[test]
    fn odd_extent_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 1]).unwrap();
        assert!(matches!(maxpool2d(&x), Err(Error::Shape { .. })));
    }
}
