use std::sync::Arc;

use crate::rng::Rng;
use crate::scalar::Scalar;

/// Dense row-major tensor. Data is behind an `Arc` so graph nodes and
/// checkpoints can share buffers without copying.
#[derive(Clone, Debug)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {shape:?} wants {numel} elements, got {}",
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![S::ZERO; numel]),
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: S) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![v; numel]),
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor::from_vec(vec![1], vec![v])
    }

    /// I.i.d. normal entries with the given std.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut Rng) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| S::from_f64(rng.normal() * std))
            .collect();
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable view; clones the buffer if it is shared.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        let v: &mut Vec<S> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Same buffer, new shape (element count must match).
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.numel(), "reshape {:?} -> {shape:?}", self.shape);
        Tensor {
            shape,
            data: Arc::clone(&self.data),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn from_f64_slice(shape: impl Into<Vec<usize>>, data: &[f64]) -> Self {
        Tensor::from_vec(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// dst += src
    pub fn add_in_place(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape);
        let other = other.data();
        for (d, s) in self.data_mut().iter_mut().zip(other) {
            *d += *s;
        }
    }
}

impl<S: Scalar> PartialEq for Tensor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data.as_slice() == other.data.as_slice()
    }
}
