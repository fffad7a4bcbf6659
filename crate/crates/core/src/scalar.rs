//! Floating-point element types accepted by tensors and the autodiff tape.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit floats, used for training.
    Train,
    /// 64-bit floats, used for gradient checks and oracles.
    Check,
}

impl Precision {
    /// Flag byte used by the `TNSR` container.
    pub fn flag(self) -> u8 {
        match self {
            Precision::Train => 0x20,
            Precision::Check => 0x40,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0x20 => Some(Precision::Train),
            0x40 => Some(Precision::Check),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::Train => 4,
            Precision::Check => 8,
        }
    }
}

/// Real scalar usable as a tensor element.
///
/// Besides the usual float arithmetic this carries a dense matrix-multiply
/// kernel, which is where nearly all convolution time goes.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    /// `c = a · b + beta · c` on strided matrices, `a` is `m×k`, `b` is `k×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $prec:expr, $gemm:path, $n:literal) => {
        impl Scalar for $t {
            const PRECISION: Precision = $prec;

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows as isize - 1) * rs + (cols as isize - 1) * cs
                };
                if k > 0 {
                    assert!(last(m, k, rsa, csa) < a.len() as isize);
                    assert!(last(k, n, rsb, csb) < b.len() as isize);
                }
                assert!(last(m, n, rsc, csc) < c.len() as isize);
                // SAFETY: the asserts above keep every strided access in bounds,
                // and `c` is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; $n];
                buf.copy_from_slice(&bytes[..$n]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, Precision::Train, matrixmultiply::sgemm, 4);
impl_scalar!(f64, Precision::Check, matrixmultiply::dgemm, 8);

/// Row-major matrix product helper: `c (+)= op(a) · op(b)`.
///
/// `a` is stored as `m×k` (or `k×m` when `trans_a`), `b` as `k×n` (or `n×k`
/// when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_strided(m, k, n, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}
