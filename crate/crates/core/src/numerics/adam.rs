use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Adam moments and hyperparameters for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<F> {
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { step: 0, m: Vec::new(), v: Vec::new(), lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    pub fn first_moments(&self) -> &[Vec<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<F>] {
        &self.v
    }
}

/// One Adam update with bias correction.
///
/// Weight decay is decoupled: `p <- p - lr * wd * p` happens before the moment update.
/// Gradients are read from each tensor's grad buffer; a missing buffer counts as zero.
pub fn adam_step<F: Scalar>(params: &mut [&mut Tensor<F>], state: &mut AdamState<F>) -> Result<()> {
    if !(state.lr > 0.0) || state.weight_decay < 0.0 {
        return Err(Error::arg("adam needs lr > 0 and weight_decay >= 0"));
    }
    if state.m.is_empty() && state.step == 0 {
        state.m = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::arg(format!("adam state tracks {} parameters, got {}", state.m.len(), params.len())));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.numel() {
            return Err(Error::arg(format!("adam parameter {i} changed size")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().map(<[F]>::to_vec);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let values = p.data_mut();
        for j in 0..values.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j].to_f64_lossy());
            let mut x = values[j].to_f64_lossy();
            if state.weight_decay != 0.0 {
                x *= decay;
            }
            let mj = b1 * m[j].to_f64_lossy() + (1.0 - b1) * g;
            let vj = b2 * v[j].to_f64_lossy() + (1.0 - b2) * g * g;
            m[j] = F::from_f64_lossy(mj);
            v[j] = F::from_f64_lossy(vj);
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            x -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            values[j] = F::from_f64_lossy(x);
        }
    }
    Ok(())
}
