//! Dense row-major float tensors.
//!
//! Values are held as `f64` internally. A tensor tagged [`DType::F32`] rounds
//! every produced value to single precision, so arithmetic behaves as if the
//! data were stored in `f32`.

mod conv;
mod io;

pub use conv::{conv2d, conv2d_backward_input, conv2d_backward_kernels, conv2d_batched};
pub use io::{read_mrt1, write_mrt1, MRT1_MAGIC};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::F32 => x as f32 as f64,
            DType::F64 => x,
        }
    }

    /// The narrower of two precisions; binary ops produce this dtype.
    pub fn join(self, other: DType) -> DType {
        if self == DType::F32 || other == DType::F32 {
            DType::F32
        } else {
            DType::F64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

/// Row-major strides for `shape`; the last stride is 1.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, dtype: DType::F64 })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], dtype: DType::F64 }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect(), dtype: DType::F64 }
    }

    /// A rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, dtype: DType::F64 }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Re-tag the tensor, rounding values when narrowing to `f32`.
    pub fn to_dtype(&self, dtype: DType) -> Self {
        let mut out = self.clone();
        out.dtype = dtype;
        out.round_in_place();
        out
    }

    pub(crate) fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self.round_in_place();
        self
    }

    fn round_in_place(&mut self) {
        if self.dtype == DType::F32 {
            for x in &mut self.data {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone(), dtype: self.dtype })
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0;
        for ((&i, &extent), stride) in index.iter().zip(&self.shape).zip(strides(&self.shape)) {
            if i >= extent {
                return Err(Error::shape(format!("index {index:?} out of bounds for {:?}", self.shape)));
            }
            flat += i * stride;
        }
        Ok(flat)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(index)?])
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, op)?;
        let dtype = self.dtype.join(other.dtype);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| dtype.round(f(a, b))).collect();
        Ok(Tensor { shape: self.shape.clone(), data, dtype })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let dtype = self.dtype;
        let data = self.data.iter().map(|&a| dtype.round(f(a))).collect();
        Tensor { shape: self.shape.clone(), data, dtype }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|a| a * s)
    }

    /// `self += other` without reallocating.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        let dtype = self.dtype;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = dtype.round(*a + b);
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{context}: non-finite value")))
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape("matmul expects rank-2 operands"));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let dtype = self.dtype.join(other.dtype);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out, dtype }.with_dtype(dtype))
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape("transpose expects a rank-2 tensor"));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out, dtype: self.dtype })
    }

    /// Slice `index` along the leading axis.
    pub fn index_first(&self, index: usize) -> Result<Self> {
        if self.rank() == 0 || index >= self.shape[0] {
            return Err(Error::shape(format!("leading index {index} out of range for {:?}", self.shape)));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
            dtype: self.dtype,
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(items.len() * first.len());
        let mut dtype = first.dtype;
        for t in items {
            first.check_same_shape(t, "stack")?;
            dtype = dtype.join(t.dtype);
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data, dtype }.with_dtype(dtype))
    }

    /// Concatenate rank-4 `[B, C, H, W]` tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.rank() != 4 || b.rank() != 4 || a.shape[0] != b.shape[0] || a.shape[2..] != b.shape[2..] {
            return Err(Error::shape(format!("cannot concat {:?} with {:?}", a.shape, b.shape)));
        }
        let (batch, ca, cb) = (a.shape[0], a.shape[1], b.shape[1]);
        let plane = a.shape[2] * a.shape[3];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..batch {
            data.extend_from_slice(&a.data[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&b.data[i * cb * plane..(i + 1) * cb * plane]);
        }
        let dtype = a.dtype.join(b.dtype);
        Ok(Tensor { shape: vec![batch, ca + cb, a.shape[2], a.shape[3]], data, dtype }.with_dtype(dtype))
    }

    /// Inverse of [`Tensor::concat_channels`]: split off the first `ca` channels.
    pub fn split_channels(&self, ca: usize) -> Result<(Self, Self)> {
        if self.rank() != 4 || ca > self.shape[1] {
            return Err(Error::shape(format!("cannot split {:?} at channel {ca}", self.shape)));
        }
        let (batch, c) = (self.shape[0], self.shape[1]);
        let plane = self.shape[2] * self.shape[3];
        let cb = c - ca;
        let mut a = Vec::with_capacity(batch * ca * plane);
        let mut b = Vec::with_capacity(batch * cb * plane);
        for i in 0..batch {
            let base = i * c * plane;
            a.extend_from_slice(&self.data[base..base + ca * plane]);
            b.extend_from_slice(&self.data[base + ca * plane..base + c * plane]);
        }
        let dims = |ch| vec![batch, ch, self.shape[2], self.shape[3]];
        Ok((
            Tensor { shape: dims(ca), data: a, dtype: self.dtype },
            Tensor { shape: dims(cb), data: b, dtype: self.dtype },
        ))
    }
}
