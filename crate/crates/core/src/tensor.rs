//! Dense buffers used by the network: a scalar abstraction over `f32`/`f64`,
//! channel-major feature maps and a row-major matrix-multiply wrapper.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the network can run in. Training uses `f32`;
/// gradient checks run the same code in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on strided matrices.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
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

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits in scalar")
    }

    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
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
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
                    }
                };
                assert!(span(m, k, rsa, csa) as usize <= a.len(), "gemm: lhs too short");
                assert!(span(k, n, rsb, csb) as usize <= b.len(), "gemm: rhs too short");
                assert!(span(m, n, rsc, csc) as usize <= c.len(), "gemm: output too short");
                // SAFETY: all three operands were bounds-checked against the
                // extents implied by their strides above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
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
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major matrix product `c (+)= op(a) * op(b)`.
///
/// `a` is stored as `a_rows x a_cols`, `b` as `b_rows x b_cols`; the
/// transpose flags select which orientation takes part in the product.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (m, k, rsa, csa) = if trans_a {
        (a_cols, a_rows, 1, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b_cols, b_rows, 1, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1)
    };
    assert_eq!(k, kb, "matmul: inner dimensions differ");
    assert_eq!(c.len(), m * n, "matmul: output has wrong size");
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    T::gemm_strided(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// A batch of feature maps stored channel-major: `[channels][batch][height][width]`.
///
/// Channel-major storage makes channel concatenation a buffer append and lets
/// a convolution over the whole batch run as one matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn idx(&self, c: usize, b: usize, y: usize, x: usize) -> usize {
        ((c * self.batch + b) * self.height + y) * self.width + x
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.batch == other.batch
            && self.height == other.height
            && self.width == other.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "feature map shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis, `self` first.
    pub fn concat_channels(&self, other: &Self) -> Self {
        assert_eq!(
            (self.batch, self.height, self.width),
            (other.batch, other.height, other.width),
            "concat: spatial/batch extents differ"
        );
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self {
            channels: self.channels + other.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Splits at channel `at`, inverse of [`concat_channels`](Self::concat_channels).
    pub fn split_channels(&self, at: usize) -> (Self, Self) {
        assert!(at <= self.channels);
        let cut = at * self.batch * self.plane();
        let head = Self {
            channels: at,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data[..cut].to_vec(),
        };
        let tail = Self {
            channels: self.channels - at,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data[cut..].to_vec(),
        };
        (head, tail)
    }

    /// Extracts one batch element as a single-sample map.
    pub fn sample(&self, b: usize) -> Self {
        let plane = self.plane();
        let mut data = Vec::with_capacity(self.channels * plane);
        for c in 0..self.channels {
            let start = (c * self.batch + b) * plane;
            data.extend_from_slice(&self.data[start..start + plane]);
        }
        Self {
            channels: self.channels,
            batch: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }
}

/// Row-major `rows x cols` matrix; used for per-sample embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
