//! Dense row-major tensors and the differentiable operator set used by the
//! enhancement pipeline.
//!
//! Forward kernels live in [`ops`] and are plain functions over [`Tensor`]s.
//! [`Tape`] records those same kernels together with whatever each one needs
//! to replay its adjoint, so the training loop gets exact reverse-mode
//! gradients without a general-purpose autodiff engine.
//!
//! Everything is generic over [`Real`]; training and inference run in `f32`,
//! and the gradient-check suites instantiate the identical code in `f64`.

pub mod ops;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use tape::{Grads, Tape, Var};

/// Floating-point element type of a [`Tensor`].
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// `c = a · b (+ c when accumulate)`, all matrices given by pointer-free
    /// slices plus (row, column) strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        c_strides: (usize, usize),
        accumulate: bool,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn strided_extent(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
                c_strides: (usize, usize),
                accumulate: bool,
            ) {
                assert!(
                    a.len() >= strided_extent(m, k, a_strides),
                    "gemm: lhs out of bounds"
                );
                assert!(
                    b.len() >= strided_extent(k, n, b_strides),
                    "gemm: rhs out of bounds"
                );
                assert!(
                    c.len() >= strided_extent(m, n, c_strides),
                    "gemm: output out of bounds"
                );
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every index the kernel touches lies within the extents
                // asserted above, and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("{op}: shape {shape:?} has a zero-sized dimension")]
    ZeroDim { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: &[usize]) -> Self {
        TensorError::Shape {
            op,
            expected: expected.into(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid { op, msg: msg.into() }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major N-dimensional array, outermost dimension first.
///
/// Scalars are represented with shape `[1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim {
                op: "tensor",
                shape: shape.to_vec(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength {
                op: "tensor",
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Shape-checked elsewhere; used by kernels that build their output
    /// buffer to an already validated shape.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(shape.iter().all(|&d| d > 0));
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel])
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

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, (0..numel).map(&mut f).collect())
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::shape(op, "rank-3 C×H×W tensor", &self.shape)),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    /// One `H×W` plane of a rank-3 tensor.
    pub fn plane(&self, c: usize) -> &[T] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}
