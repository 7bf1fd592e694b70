//! Dense row-major tensors.
//!
//! Activations use the axis order `batch × height × width × time × channel`
//! (channels last). Every tensor is generic over its scalar so the same
//! kernels run in `f32` for training and `f64` for gradient checking.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 5;

/// Floating point element type with a matrix-multiply backend.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    /// `c = alpha * a * b + beta * c` on raw strided buffers.
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `c (m×n) = op(a) (m×k) · op(b) (k×n) + beta · c`.
///
/// `trans_a` means `a` is stored as `k×m`; `trans_b` means `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs buffer too short");
    assert!(b.len() >= k * n, "gemm: rhs buffer too short");
    assert!(c.len() >= m * n, "gemm: output buffer too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access described by these strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

pub(crate) fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank {} exceeds the maximum of {MAX_RANK}",
            shape.len()
        )));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(format!("extent of axis {axis} is zero in {shape:?}")));
    }
    Ok(())
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<&T> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        if product(shape) != data.len() {
            return Err(Error::shape(format!(
                "buffer of {} elements does not fill shape {shape:?} ({} elements)",
                data.len(),
                product(shape)
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; product(shape)],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
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

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0;
        for (d, (&i, &stride)) in index.iter().zip(self.strides().iter()).enumerate() {
            if i >= self.shape[d] {
                return Err(Error::shape(format!(
                    "index {i} out of range for axis {d} of extent {}",
                    self.shape[d]
                )));
            }
            flat += i * stride;
        }
        Ok(flat)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let at = self.offset(index)?;
        self.data[at] = value;
        Ok(())
    }

    /// Same buffer, new shape.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if product(shape) != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) into {shape:?} ({} elements)",
                self.shape,
                self.data.len(),
                product(shape)
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_scalar(&self, s: T) -> Self {
        self.map(|v| v.max(s))
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    fn check_axes(&self, axes: &[usize]) -> Result<Vec<bool>> {
        let mut reduced = vec![false; self.rank()];
        for &axis in axes {
            if axis >= self.rank() {
                return Err(Error::shape(format!(
                    "axis {axis} out of range for rank {}",
                    self.rank()
                )));
            }
            if reduced[axis] {
                return Err(Error::shape(format!("axis {axis} listed twice")));
            }
            reduced[axis] = true;
        }
        Ok(reduced)
    }

    /// Folds the listed axes away. Output keeps the remaining axes in order.
    fn fold_axes(&self, axes: &[usize], init: T, f: impl Fn(T, T) -> T) -> Result<Self> {
        let reduced = self.check_axes(axes)?;
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&e, _)| e)
            .collect();
        let out_strides = strides_of(&out_shape);
        // Stride of each input axis within the output buffer (0 when reduced).
        let mut axis_out_stride = vec![0; self.rank()];
        let mut k = 0;
        for d in 0..self.rank() {
            if !reduced[d] {
                axis_out_stride[d] = out_strides[k];
                k += 1;
            }
        }
        let mut out = vec![init; product(&out_shape)];
        let mut index = vec![0usize; self.rank()];
        for &v in &self.data {
            let o: usize = index
                .iter()
                .zip(&axis_out_stride)
                .map(|(&i, &s)| i * s)
                .sum();
            out[o] = f(out[o], v);
            for d in (0..self.rank()).rev() {
                index[d] += 1;
                if index[d] < self.shape[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Self> {
        self.fold_axes(axes, T::zero(), |a, b| a + b)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Self> {
        let reduced = self.check_axes(axes)?;
        let count: usize = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&e, _)| e)
            .product();
        let inv = T::one() / T::from_usize(count).expect("count fits a float");
        Ok(self.sum_axes(axes)?.scale(inv))
    }

    pub fn max_axes(&self, axes: &[usize]) -> Result<Self> {
        self.fold_axes(axes, T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Index of the maximum along `axis`; ties go to the lowest index.
    ///
    /// The result has `axis` removed from the shape and is laid out row-major.
    pub fn argmax(&self, axis: usize) -> Result<Vec<usize>> {
        self.check_axes(&[axis])?;
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut best = 0;
                let mut best_value = self.data[base];
                for e in 1..extent {
                    let v = self.data[base + e * inner];
                    if v > best_value {
                        best = e;
                        best_value = v;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    /// Sub-tensor of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.check_axes(&[axis])?;
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::shape(format!(
                "narrow {start}..{} out of range for axis {axis} of extent {}",
                start + len,
                self.shape[axis]
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Concatenates along axis 0. All parts must agree on the trailing axes.
    pub fn stack0(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.shape[1..] != tail {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Tensor::from_vec(&shape, data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self
            .zip_with(other, |a, b| (a - b).abs())?
            .data
            .iter()
            .fold(T::zero(), |m, &v| m.max(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
