use umesh_core::domain::FieldTensor;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

/// Multi-channel volume, channel-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self {
            channels,
            dims,
            data: vec![T::zero(); channels * dims.iter().product::<usize>()],
        }
    }

    pub fn from_vec(channels: usize, dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = channels * dims.iter().product::<usize>();
        if data.len() != n {
            return Err(NnError::Shape(format!(
                "{channels} x {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { channels, dims, data })
    }

    /// Three-channel tensor from a field, divided by `scale`.
    pub fn from_field(field: &FieldTensor, scale: f64) -> Self {
        let inv = 1.0 / scale;
        Self {
            channels: 3,
            dims: field.dims(),
            data: field.as_slice().iter().map(|&v| T::from_f64(v as f64 * inv)).collect(),
        }
    }

    /// Field multiplied by `scale`; the tensor must have three channels.
    pub fn to_field(&self, scale: f64) -> Result<FieldTensor> {
        if self.channels != 3 {
            return Err(NnError::Shape(format!("expected 3 channels, got {}", self.channels)));
        }
        Ok(FieldTensor::from_vec(
            self.dims,
            self.data.iter().map(|&v| (v.as_f64() * scale) as f32).collect(),
        )?)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let v = self.voxels();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn index(&self, c: usize, [x, y, z]: [usize; 3]) -> usize {
        let [nx, ny, nz] = self.dims;
        ((c * nz + z) * ny + y) * nx + x
    }

    /// Stacks channels of `a` then `b`.
    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        if a.dims != b.dims {
            return Err(NnError::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.dims, b.dims
            )));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self {
            channels: a.channels + b.channels,
            dims: a.dims,
            data,
        })
    }

    /// Splits into the first `n` channels and the rest.
    pub fn split_channels(&self, n: usize) -> (Self, Self) {
        let cut = n * self.voxels();
        (
            Self {
                channels: n,
                dims: self.dims,
                data: self.data[..cut].to_vec(),
            },
            Self {
                channels: self.channels - n,
                dims: self.dims,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
