//! Dense row-major `f32` tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An n-dimensional `f32` array stored row-major (last index fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` is non-empty, every dimension is
    /// positive, the element count matches, and all values are finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Rounds an `f64` buffer into a tensor.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::OutOfRange(format!(
                "index {index:?} has rank {}, tensor has rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::OutOfRange(format!(
                    "index {index:?} outside shape {:?}",
                    self.shape
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f32> {
        Ok(self.data[self.offset(index)?])
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for (slot, &d) in idx.iter_mut().zip(&self.shape).rev() {
            *slot = flat % d;
            flat /= d;
        }
        idx
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Converts an `H×W×C` tensor into `C×H×W`.
    pub fn hwc_to_chw(&self) -> Result<Self> {
        let [h, w, c] = self.dims3()?;
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Ok(Self {
            shape: vec![c, h, w],
            data: out,
        })
    }

    pub(crate) fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::Shape(format!(
                "expected a rank-3 tensor, got {:?}",
                self.shape
            ))),
        }
    }
}
