use rand::Rng;

use super::layers::Linear;
use super::Module;
use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::{Scalar, Tensor};

/// `linear -> ReLU -> linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<F> {
    pub l1: Linear<F>,
    pub l2: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<F> {
    input: Tensor<F>,
    hidden_pre: Tensor<F>,
    hidden: Tensor<F>,
}

impl<F: Scalar> ProjectionHead<F> {
    pub fn new(f_in: usize, hidden: usize, f_out: usize, rng: &mut impl Rng) -> Self {
        Self { l1: Linear::new(f_in, hidden, rng), l2: Linear::new(hidden, f_out, rng) }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, HeadCache<F>)> {
        if x.shape().len() != 2 || x.dim(1) != self.in_dim() {
            return Err(Error::arg(format!("projection head expects [B, {}], got {:?}", self.in_dim(), x.shape())));
        }
        let hidden_pre = self.l1.forward(x)?;
        let hidden = ops::relu(&hidden_pre);
        let y = self.l2.forward(&hidden)?;
        let mut input = x.clone();
        input.clear_grad();
        Ok((y, HeadCache { input, hidden_pre, hidden }))
    }

    pub fn backward(&mut self, cache: &HeadCache<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
        let gh = self.l2.backward(&cache.hidden, grad_out)?;
        let gh = ops::relu_backward(&cache.hidden_pre, &gh);
        self.l1.backward(&cache.input, &gh)
    }

    pub fn cast<G: Scalar>(&self) -> ProjectionHead<G> {
        ProjectionHead { l1: self.l1.cast(), l2: self.l2.cast() }
    }
}

impl<F: Scalar> Module<F> for ProjectionHead<F> {
    fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        vec![("l1.weight".into(), &self.l1.w), ("l1.bias".into(), &self.l1.b), ("l2.weight".into(), &self.l2.w), ("l2.bias".into(), &self.l2.b)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![("l1.weight".into(), &mut self.l1.w), ("l1.bias".into(), &mut self.l1.b), ("l2.weight".into(), &mut self.l2.w), ("l2.bias".into(), &mut self.l2.b)]
    }
}
