//! 2-D convolution and 2×2/stride-2 transposed convolution on NHWC tensors.
//!
//! Kernels are laid out `[k_h, k_w, in_channels, out_channels]`, so the
//! flattened kernel is directly the right-hand matrix of an im2col product.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Closed-form parameter count of a convolution with `rank` spatial axes.
pub fn conv_param_count(rank: usize, kernel: usize, cin: usize, cout: usize, bias: bool) -> usize {
    kernel.pow(rank as u32) * cin * cout + if bias { cout } else { 0 }
}

/// Weights of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(kernel: usize, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::InvalidShape(format!(
                "convolution needs at least one input and output channel, got {cin}->{cout}"
            )));
        }
        Ok(ConvParams {
            kernel: Tensor::zeros(&[kernel, kernel, cin, cout])?,
            bias: if bias { Some(Tensor::zeros(&[cout])?) } else { None },
            stride: 1,
            padding: Padding::Same,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }
}

/// Cross-correlation plus bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_forward(x, &p.kernel, p.bias.as_ref(), p.stride, p.padding)
}

/// Learned 2× upsampling; `p.kernel` must be `[2, 2, cin, cout]`.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv_transpose2d_forward(x, &p.kernel, p.bias.as_ref())
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    pub(crate) fn new(
        x: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::shape("conv2d", format!("input must be [N,H,W,C], got {x:?}")));
        }
        if kernel.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be [kh,kw,cin,cout], got {kernel:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let (n, h, w, cin) = (x[0], x[1], x[2], x[3]);
        let (kh, kw, kcin, cout) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, kernel expects {kcin}"),
            ));
        }
        let axis = |len: usize, k: usize| -> Result<(usize, usize)> {
            match padding {
                Padding::Same => {
                    let out = len.div_ceil(stride);
                    let total = ((out - 1) * stride + k).saturating_sub(len);
                    Ok((out, total / 2))
                }
                Padding::Valid => {
                    if k > len {
                        return Err(Error::shape(
                            "conv2d",
                            format!("kernel extent {k} exceeds input extent {len}"),
                        ));
                    }
                    Ok(((len - k) / stride + 1, 0))
                }
            }
        };
        let (oh, pad_top) = axis(h, kh)?;
        let (ow, pad_left) = axis(w, kw)?;
        Ok(ConvGeometry {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.oh, self.ow, self.cout]
    }

    /// Calls `f(col_offset, input_offset)` for every in-bounds `cin`-wide tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let patch = self.patch();
        let span = |o_len: usize, k: usize, pad: usize, len: usize| {
            // valid o satisfies pad <= o*stride + k < len + pad
            let lo = pad.saturating_sub(k).div_ceil(self.stride);
            let hi = if len + pad > k { ((len + pad - k - 1) / self.stride + 1).min(o_len) } else { 0 };
            (lo, hi.max(lo))
        };
        for b in 0..self.n {
            let img = b * self.h * self.w;
            for oy in 0..self.oh {
                let row0 = (b * self.oh + oy) * self.ow;
                for ky in 0..self.kh {
                    let Some(iy) = (oy * self.stride + ky).checked_sub(self.pad_top) else { continue };
                    if iy >= self.h {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let (lo, hi) = span(self.ow, kx, self.pad_left, self.w);
                        let off = (ky * self.kw + kx) * self.cin;
                        for ox in lo..hi {
                            let ix = ox * self.stride + kx - self.pad_left;
                            f((row0 + ox) * patch + off, (img + iy * self.w + ix) * self.cin);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let cin = self.cin;
        let mut cols = vec![T::zero(); self.rows() * self.patch()];
        self.for_each_tap(|dst, src| cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]));
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let cin = self.cin;
        self.for_each_tap(|src, dst| {
            for (d, &v) in dx[dst..dst + cin].iter_mut().zip(&cols[src..src + cin]) {
                *d += v;
            }
        });
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?} does not match {cout} filters", b.shape()),
            ));
        }
    }
    Ok(())
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride, padding)?;
    check_bias("conv2d", bias, g.cout)?;
    let (m, k, n) = (g.rows(), g.patch(), g.cout);
    let mut out = vec![T::zero(); m * n];
    if let Some(b) = bias {
        for row in out.chunks_mut(n) {
            row.copy_from_slice(b.data());
        }
    }
    if g.is_pointwise() {
        gemm(false, false, m, k, n, x.data(), kernel.data(), &mut out, true);
    } else {
        let cols = g.im2col(x.data());
        gemm(false, false, m, k, n, &cols, kernel.data(), &mut out, true);
    }
    Ok(Tensor::from_parts(g.out_shape(), out))
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dkernel: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
    dy: &Tensor<T>,
    want_dx: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride, padding)?;
    let (m, k, n) = (g.rows(), g.patch(), g.cout);
    debug_assert_eq!(dy.len(), m * n);
    let mut dbias = vec![T::zero(); n];
    for row in dy.data().chunks(n) {
        for (acc, &v) in dbias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut dk = vec![T::zero(); k * n];
    let pointwise = g.is_pointwise();
    let cols_owned;
    let cols: &[T] = if pointwise {
        x.data()
    } else {
        cols_owned = g.im2col(x.data());
        &cols_owned
    };
    gemm(true, false, k, m, n, cols, dy.data(), &mut dk, false);
    let dx = if want_dx {
        let mut dcols = vec![T::zero(); m * k];
        gemm(false, true, m, n, k, dy.data(), kernel.data(), &mut dcols, false);
        if pointwise {
            Some(Tensor::from_parts(x.shape().to_vec(), dcols))
        } else {
            let mut dx = vec![T::zero(); x.len()];
            g.col2im(&dcols, &mut dx);
            Some(Tensor::from_parts(x.shape().to_vec(), dx))
        }
    } else {
        None
    };
    Ok(ConvGrads {
        dx,
        dkernel: Tensor::from_parts(kernel.shape().to_vec(), dk),
        dbias: Tensor::from_parts(vec![n], dbias),
    })
}

fn transpose_geometry(x: &[usize], kernel: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    if x.len() != 4 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input must be [N,H,W,C], got {x:?}"),
        ));
    }
    if kernel.len() != 4 || kernel[0] != 2 || kernel[1] != 2 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("only 2x2 stride-2 kernels are supported, got {kernel:?}"),
        ));
    }
    if kernel[2] != x[3] {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input has {} channels, kernel expects {}", x[3], kernel[2]),
        ));
    }
    Ok((x[0], x[1], x[2], x[3], kernel[3]))
}

/// `[2,2,cin,cout]` -> `[cin, (a,b,cout)]`.
fn kernel_to_rows<T: Scalar>(kernel: &[T], cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); kernel.len()];
    for tap in 0..4 {
        for ci in 0..cin {
            for co in 0..cout {
                out[ci * 4 * cout + tap * cout + co] = kernel[(tap * cin + ci) * cout + co];
            }
        }
    }
    out
}

fn rows_to_kernel<T: Scalar>(rows: &[T], cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows.len()];
    for tap in 0..4 {
        for ci in 0..cin {
            for co in 0..cout {
                out[(tap * cin + ci) * cout + co] = rows[ci * 4 * cout + tap * cout + co];
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, h, w, cin, cout) = transpose_geometry(x.shape(), kernel.shape())?;
    check_bias("conv_transpose2d", bias, cout)?;
    let m = n * h * w;
    let wr = kernel_to_rows(kernel.data(), cin, cout);
    let mut y = vec![T::zero(); m * 4 * cout];
    gemm(false, false, m, cin, 4 * cout, x.data(), &wr, &mut y, false);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * oh * ow * cout];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let src = ((b * h + i) * w + j) * 4 * cout;
                for tap in 0..4 {
                    let (a, c) = (tap / 2, tap % 2);
                    let dst = ((b * oh + 2 * i + a) * ow + 2 * j + c) * cout;
                    out[dst..dst + cout].copy_from_slice(&y[src + tap * cout..src + (tap + 1) * cout]);
                    if let Some(bias) = bias {
                        for (o, &bv) in out[dst..dst + cout].iter_mut().zip(bias.data()) {
                            *o += bv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oh, ow, cout], out))
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    want_dx: bool,
) -> Result<ConvGrads<T>> {
    let (n, h, w, cin, cout) = transpose_geometry(x.shape(), kernel.shape())?;
    let m = n * h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut gathered = vec![T::zero(); m * 4 * cout];
    let mut dbias = vec![T::zero(); cout];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let dst = ((b * h + i) * w + j) * 4 * cout;
                for tap in 0..4 {
                    let (a, c) = (tap / 2, tap % 2);
                    let src = ((b * oh + 2 * i + a) * ow + 2 * j + c) * cout;
                    let g = &dy.data()[src..src + cout];
                    gathered[dst + tap * cout..dst + (tap + 1) * cout].copy_from_slice(g);
                }
            }
        }
    }
    for row in dy.data().chunks(cout) {
        for (acc, &v) in dbias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut dwr = vec![T::zero(); cin * 4 * cout];
    gemm(true, false, cin, m, 4 * cout, x.data(), &gathered, &mut dwr, false);
    let dx = if want_dx {
        let wr = kernel_to_rows(kernel.data(), cin, cout);
        let mut dx = vec![T::zero(); m * cin];
        gemm(false, true, m, 4 * cout, cin, &gathered, &wr, &mut dx, false);
        Some(Tensor::from_parts(x.shape().to_vec(), dx))
    } else {
        None
    };
    Ok(ConvGrads {
        dx,
        dkernel: Tensor::from_parts(kernel.shape().to_vec(), rows_to_kernel(&dwr, cin, cout)),
        dbias: Tensor::from_parts(vec![cout], dbias),
    })
}
