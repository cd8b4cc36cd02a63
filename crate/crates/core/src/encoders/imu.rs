use rand::Rng;

use super::layers::Conv1dLayer;
use super::{Module, SensorEncoder};
use crate::error::{Error, Result};
use crate::numerics::ops::{self, Padding};
use crate::numerics::{Scalar, Tensor};
use crate::rng;

pub const IMU_FEATURE_DIM: usize = 128;
const FILTERS: [usize; 3] = [32, 64, 128];
const KERNEL: usize = 3;
pub const IMU_DROPOUT: f64 = 0.2;

/// Three conv blocks (conv, ReLU, dropout) followed by max pooling over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuEncoder<F> {
    pub convs: Vec<Conv1dLayer<F>>,
    pub dropout: f64,
    pub window_len: usize,
}

#[derive(Debug, Clone)]
pub struct ImuCache<F> {
    inputs: Vec<Tensor<F>>,
    pre_act: Vec<Tensor<F>>,
    masks: Vec<Option<Vec<F>>>,
    last_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl<F: Scalar> ImuEncoder<F> {
    pub fn new(window_len: usize, rng: &mut impl Rng) -> Self {
        let mut c_in = 3;
        let convs = FILTERS
            .iter()
            .map(|&c_out| {
                let layer = Conv1dLayer::new(c_in, c_out, KERNEL, Padding::Reflect, rng);
                c_in = c_out;
                layer
            })
            .collect();
        Self { convs, dropout: IMU_DROPOUT, window_len }
    }

    pub fn cast<G: Scalar>(&self) -> ImuEncoder<G> {
        ImuEncoder { convs: self.convs.iter().map(Conv1dLayer::cast).collect(), dropout: self.dropout, window_len: self.window_len }
    }
}

impl<F: Scalar> Module<F> for ImuEncoder<F> {
    fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.w));
            out.push((format!("conv{i}.bias"), &c.b));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{i}.weight"), &mut c.w));
            out.push((format!("conv{i}.bias"), &mut c.b));
        }
        out
    }
}

impl<F: Scalar> SensorEncoder<F> for ImuEncoder<F> {
    type Cache = ImuCache<F>;

    fn feature_dim(&self) -> usize {
        self.convs.last().map_or(0, |c| c.w.dim(0))
    }

    fn encode(&self, batch: &Tensor<F>, training: bool, seed: u64) -> Result<(Tensor<F>, ImuCache<F>)> {
        let s = batch.shape();
        if s.len() != 3 || s[0] == 0 || s[1] != 3 || s[2] != self.window_len {
            return Err(Error::arg(format!("expected windows [B>=1, 3, {}], got {s:?}", self.window_len)));
        }
        let mut cache = ImuCache { inputs: Vec::new(), pre_act: Vec::new(), masks: Vec::new(), last_shape: Vec::new(), argmax: Vec::new() };
        let mut h = batch.clone();
        h.clear_grad();
        for (i, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(&h)?;
            let a = ops::relu(&z);
            let (d, mask) = ops::dropout(&a, self.dropout, training, rng::derive(seed, &[i as u64]))?;
            cache.inputs.push(h);
            cache.pre_act.push(z);
            cache.masks.push(mask);
            h = d;
        }
        let (pooled, argmax) = ops::max_over_time(&h)?;
        cache.last_shape = h.shape().to_vec();
        cache.argmax = argmax;
        Ok((pooled, cache))
    }

    fn backward(&mut self, cache: &ImuCache<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = ops::max_over_time_backward(&cache.last_shape, &cache.argmax, grad_out);
        for i in (0..self.convs.len()).rev() {
            g = ops::dropout_backward(cache.masks[i].as_deref(), &g);
            g = ops::relu_backward(&cache.pre_act[i], &g);
            g = self.convs[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}
