//! Dense row-major tensors.
//!
//! Storage is always `f64`. A tensor tagged [`DType::F32`] holds only values
//! representable in single precision: every constructor rounds through `f32`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }

    pub fn round_slice(self, data: &mut [f64]) {
        if self == DType::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(DType::F32),
            "f64" | "float64" => Ok(DType::F64),
            other => Err(Error::invalid(format!("unknown dtype '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], mut data: Vec<f64>, dtype: DType) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            ));
        }
        dtype.round_slice(&mut data);
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype,
            data,
        })
    }

    /// Internal constructor for kernels that already produce the right length.
    pub(crate) fn from_parts(shape: Vec<usize>, mut data: Vec<f64>, dtype: DType) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        dtype.round_slice(&mut data);
        Tensor { shape, dtype, data }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, 0.0, dtype)
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: vec![dtype.round(value); n],
        }
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Tensor {
            shape: Vec::new(),
            dtype,
            data: vec![dtype.round(value)],
        }
    }

    pub fn from_vec(data: Vec<f64>, dtype: DType) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data, dtype)
    }

    pub fn eye(n: usize, dtype: DType) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            dtype,
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.clone(), dtype)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: self.dtype,
            data: self.data.clone(),
        })
    }

    /// Rows `indices` along the leading axis.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(Error::shape("select_rows", "cannot index a scalar"));
        }
        let rows = self.shape[0];
        let stride = self.numel() / rows.max(1);
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= rows {
                return Err(Error::shape(
                    "select_rows",
                    format!("row {i} out of range for leading extent {rows}"),
                ));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor {
            shape,
            dtype: self.dtype,
            data,
        })
    }

    /// Concatenates along the leading axis. Trailing extents and dtypes must
    /// agree.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no tensors to concatenate"));
        };
        if first.shape.is_empty() {
            return Err(Error::shape("concat_rows", "cannot concatenate scalars"));
        }
        let mut shape = first.shape.clone();
        shape[0] = 0;
        let mut data = Vec::new();
        for t in parts {
            if t.shape.len() != first.shape.len() || t.shape[1..] != first.shape[1..] || t.dtype != first.dtype {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{:?} {} does not stack with {:?} {}", t.shape, t.dtype, first.shape, first.dtype),
                ));
            }
            shape[0] += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape,
            dtype: first.dtype,
            data,
        })
    }

    /// Applies `f` to every element, keeping shape and dtype.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
            self.dtype,
        )
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
