//! Minimal dense f32 tensor engine with a recorded forward pass,
//! reverse-mode gradients, and an Adam optimizer.
//!
//! Values are stored row-major; images use batch x channels x height x width
//! order. Every operation is a pure function of its inputs plus explicit
//! state, so independent recordings can run on independent threads.

mod linalg;
mod optim;
mod tape;

pub use linalg::{conv2d_raw, matmul, Conv2dShape};
pub use optim::{AdamState, Binding, ParamId, ParamSet};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense N-dimensional array of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Zero-mean Gaussian samples with the given standard deviation.
    pub fn randn(rng: &mut impl Rng, shape: impl Into<Vec<usize>>, std: f32) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (z as f32) * std
            })
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} incompatible with {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Stack rank-3 (C,H,W) images into a rank-4 (N,C,H,W) batch.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack", "empty batch"))?;
        if first.rank() != 3 {
            return Err(Error::shape("stack", "items must be rank 3"));
        }
        let mut data = Vec::with_capacity(items.len() * first.numel());
        for item in items {
            if item.shape() != first.shape() {
                return Err(Error::shape("stack", "items differ in shape"));
            }
            data.extend_from_slice(item.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        Tensor::new(shape, data)
    }

    /// Extract item `n` of a rank-4 batch as a rank-3 tensor.
    pub fn unstack(&self, n: usize) -> Result<Self> {
        if self.rank() != 4 {
            return Err(Error::shape("unstack", "expected rank 4"));
        }
        let per = self.numel() / self.shape[0];
        if n >= self.shape[0] {
            return Err(Error::invalid("unstack", format!("index {n} out of range")));
        }
        Tensor::new(
            self.shape[1..].to_vec(),
            self.data[n * per..(n + 1) * per].to_vec(),
        )
    }
}
