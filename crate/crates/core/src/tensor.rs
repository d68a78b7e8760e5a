//! Dense row-major tensor of `f64` scalars.
//!
//! Feature maps follow the (task-height, width, channel) axis order; when a
//! map is used as a set of queries it is viewed as a `(T*H*W, C)` matrix over
//! the same buffer.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Error, Result};
use crate::gemm::{gemm, MatMut, MatRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        ensure!(!shape.is_empty(), "tensor shape must have at least one dimension");
        let n = numel(&shape).ok_or_else(|| invalid!("shape {shape:?} overflows"))?;
        ensure!(
            n == data.len(),
            "shape {shape:?} needs {n} scalars, got {}",
            data.len()
        );
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(!shape.is_empty(), "tensor shape must have at least one dimension");
        let n = numel(&shape).expect("tensor size overflows usize");
        Self { data: vec![value; n], shape }
    }

    /// Zero tensor whose allocation failure is reported instead of aborting.
    pub fn try_zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        ensure!(!shape.is_empty(), "tensor shape must have at least one dimension");
        let n = numel(&shape)
            .ok_or_else(|| Error::Resource(format!("tensor of shape {shape:?} overflows")))?;
        let mut data = Vec::new();
        data.try_reserve_exact(n).map_err(|_| {
            Error::Resource(format!(
                "cannot allocate {n} scalars for tensor of shape {shape:?}"
            ))
        })?;
        data.resize(n, 0.0);
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Number of rows when viewed as a matrix over the trailing axis.
    pub fn outer_len(&self) -> usize {
        let last = self.last_dim();
        if last == 0 {
            numel(&self.shape[..self.rank() - 1]).unwrap_or(0)
        } else {
            self.len() / last
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        ensure!(!shape.is_empty(), "tensor shape must have at least one dimension");
        ensure!(
            numel(&shape) == Some(self.data.len()),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape;
        Ok(self)
    }

    /// View as `(rows, last_dim)`.
    pub fn as_matrix(self) -> Self {
        let cols = self.last_dim();
        let rows = self.outer_len();
        Self { shape: vec![rows, cols], data: self.data }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        ensure!(self.shape == other.shape, "shape mismatch {:?} vs {:?}", self.shape, other.shape);
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        ensure!(self.shape == other.shape, "shape mismatch {:?} vs {:?}", self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        ensure!(self.shape == other.shape, "shape mismatch {:?} vs {:?}", self.shape, other.shape);
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along `axis`; every other dimension must agree.
    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors.first().ok_or_else(|| invalid!("concat of an empty list"))?;
        let rank = first.rank();
        ensure!(axis < rank, "concat axis {axis} out of range for rank {rank}");
        for t in tensors {
            ensure!(
                t.rank() == rank
                    && t.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b),
                "concat shape mismatch off axis {axis}: {:?} vs {:?}",
                t.shape,
                first.shape
            );
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel(&shape).unwrap_or(0));
        for o in 0..outer {
            for t in tensors {
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(shape, data)
    }

    /// Copies `len` consecutive indices starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        ensure!(axis < self.rank(), "axis {axis} out of range for rank {}", self.rank());
        let dim = self.shape[axis];
        ensure!(
            start.checked_add(len).is_some_and(|end| end <= dim),
            "range {start}..{} out of bounds for axis {axis} of size {dim}",
            start.saturating_add(len)
        );
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Tensor::new(shape, data)
    }

    /// Contiguous block of `len` entries along the leading axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        self.narrow(0, start, len)
    }

    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        ensure!(
            self.rank() == 2 && b.rank() == 2,
            "matmul expects rank-2 operands, got {:?} and {:?}",
            self.shape,
            b.shape
        );
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        ensure!(k == k2, "matmul inner dimensions differ: {k} vs {k2}");
        let mut out = Tensor::zeros([m, n]);
        gemm(
            1.0,
            MatRef::rm(&self.data, m, k),
            MatRef::rm(&b.data, k, n),
            0.0,
            MatMut::rm(&mut out.data, m, n),
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        ensure!(self.rank() == 2, "transpose expects rank 2, got {:?}", self.shape);
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Tensor::from_fn([c, r], |i| self.data[(i % r) * c + i / r]))
    }
}
