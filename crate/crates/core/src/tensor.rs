//! Dense row-major `f64` tensors.

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(config_err!("tensor extents must be positive, got {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(config_err!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(&[data.len()], data)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    /// Adds `delta` into the gradient buffer, creating it if absent.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(config_err!(
                "gradient of length {} does not match tensor of {}",
                delta.len(),
                self.data.len()
            ));
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
        Ok(())
    }

    /// Like [`Tensor::accumulate_grad`], but takes ownership so an empty
    /// buffer is filled without copying.
    pub fn accumulate_grad_owned(&mut self, delta: Vec<f64>) -> Result<()> {
        if self.grad.is_none() && delta.len() == self.data.len() {
            self.grad = Some(delta);
            return Ok(());
        }
        self.accumulate_grad(&delta)
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(&[2]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        assert_eq!(t.grad(), Some(&[1.5, 2.5][..]));
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.clear_grad();
        assert!(t.grad().is_none());
    }
}
