//! Resampling of `[H, W, C]` tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// For images.
    Bilinear,
    /// For masks; never invents new values.
    Nearest,
}

/// Resizes with half-pixel-centred sampling.
pub fn resize<T: Scalar>(t: &Tensor<T>, extents: [usize; 2], method: Interpolation) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::shape("resize", format!("expected [H, W, C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let [nh, nw] = extents;
    if nh == 0 || nw == 0 {
        return Err(Error::InvalidShape(format!("resize target {nh}x{nw}")));
    }
    if nh == h && nw == w {
        return Ok(t.clone());
    }
    let src = t.data();
    let mut out = Vec::with_capacity(nh * nw * c);
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    for oy in 0..nh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        for ox in 0..nw {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            match method {
                Interpolation::Nearest => {
                    let iy = (((oy as f64 + 0.5) * sy) as usize).min(h - 1);
                    let ix = (((ox as f64 + 0.5) * sx) as usize).min(w - 1);
                    out.extend_from_slice(&src[(iy * w + ix) * c..(iy * w + ix + 1) * c]);
                }
                Interpolation::Bilinear => {
                    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (ty, tx) = (T::from_f64_lossy(fy - y0 as f64), T::from_f64_lossy(fx - x0 as f64));
                    let one = T::one();
                    for ch in 0..c {
                        let p = |y: usize, x: usize| src[(y * w + x) * c + ch];
                        let top = p(y0, x0) * (one - tx) + p(y0, x1) * tx;
                        let bottom = p(y1, x0) * (one - tx) + p(y1, x1) * tx;
                        out.push(top * (one - ty) + bottom * ty);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![nh, nw, c], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_resize_is_bitwise_equal() {
        let t = Tensor::new(vec![2, 3, 1], vec![0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize(&t, [2, 3], Interpolation::Bilinear).unwrap(), t);
    }

    #[test]
    fn constant_upsampling_stays_constant() {
        let t = Tensor::full(&[2, 2, 2], 0.7f64).unwrap();
        let r = resize(&t, [4, 4], Interpolation::Bilinear).unwrap();
        assert_eq!(r.shape(), &[4, 4, 2]);
        assert!(r.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn bilinear_interpolates_between_neighbours() {
        let t = Tensor::new(vec![1, 2, 1], vec![0.0f64, 1.0]).unwrap();
        let r = resize(&t, [1, 4], Interpolation::Bilinear).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    proptest! {
        #[test]
        fn nearest_keeps_masks_binary(
            bits in proptest::collection::vec(any::<bool>(), 64),
            nh in 1usize..40, nw in 1usize..40,
        ) {
            let t = Tensor::new(vec![8, 8, 1], bits.iter().map(|&b| b as u8 as f32).collect()).unwrap();
            let r = resize(&t, [nh, nw], Interpolation::Nearest).unwrap();
            prop_assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
