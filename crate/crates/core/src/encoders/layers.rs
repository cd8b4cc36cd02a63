use rand::Rng;

use crate::error::Result;
use crate::numerics::ops::{self, Padding};
use crate::numerics::{Scalar, Tensor};

fn uniform<F: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::from_f64_lossy(rng.random_range(-bound..bound)))
}

/// Fully connected layer, `w: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

impl<F: Scalar> Linear<F> {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn new(f_in: usize, f_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (f_in as f64).sqrt();
        Self { w: uniform(&[f_out, f_in], bound, rng), b: uniform(&[f_out], bound, rng) }
    }

    pub fn in_dim(&self) -> usize {
        self.w.dim(1)
    }

    pub fn out_dim(&self) -> usize {
        self.w.dim(0)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::linear(x, &self.w, &self.b)
    }

    /// Accumulates into `w`/`b` gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
        let g = ops::linear_backward(x, &self.w, grad_out)?;
        self.w.accumulate_grad(g.w.data());
        self.b.accumulate_grad(g.b.data());
        Ok(g.x)
    }

    pub fn cast<G: Scalar>(&self) -> Linear<G> {
        Linear { w: self.w.cast(), b: self.b.cast() }
    }
}

/// Same-length 1-D convolution, `w: [out, in, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer<F> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
    pub padding: Padding,
}

impl<F: Scalar> Conv1dLayer<F> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, padding: Padding, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Self { w: uniform(&[c_out, c_in, kernel], bound, rng), b: uniform(&[c_out], bound, rng), padding }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::conv1d(x, &self.w, &self.b, self.padding)
    }

    pub fn backward(&mut self, x: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
        let g = ops::conv1d_backward(x, &self.w, grad_out, self.padding)?;
        self.w.accumulate_grad(g.w.data());
        self.b.accumulate_grad(g.b.data());
        Ok(g.x)
    }

    pub fn cast<G: Scalar>(&self) -> Conv1dLayer<G> {
        Conv1dLayer { w: self.w.cast(), b: self.b.cast(), padding: self.padding }
    }
}
