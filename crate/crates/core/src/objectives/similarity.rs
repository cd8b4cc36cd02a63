use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::{matmul, Scalar, Tensor};

/// Initial temperature; the stored log-scale starts at `ln(1 / INIT_TEMPERATURE)`.
pub const INIT_TEMPERATURE: f64 = 0.07;

/// Learnable logit scale kept in log space and clamped at `ln(100)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureParam<F> {
    pub log_scale: Tensor<F>,
    pub clamp_max: f64,
}

impl<F: Scalar> Default for TemperatureParam<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> TemperatureParam<F> {
    pub fn new() -> Self {
        Self::from_scale(1.0 / INIT_TEMPERATURE)
    }

    pub fn from_scale(scale: f64) -> Self {
        Self { log_scale: Tensor::new(&[1], vec![F::from_f64_lossy(scale.ln())]).unwrap(), clamp_max: 100f64.ln() }
    }

    fn clamped(&self) -> bool {
        self.log_scale.data()[0].to_f64_lossy() >= self.clamp_max
    }

    /// `exp(min(log_scale, clamp_max))`.
    pub fn applied(&self) -> F {
        let log = self.log_scale.data()[0].to_f64_lossy().min(self.clamp_max);
        F::from_f64_lossy(log.exp())
    }

    /// Pulls the stored value back under the clamp after an optimizer step.
    pub fn clamp_stored(&mut self) {
        let max = F::from_f64_lossy(self.clamp_max);
        let v = &mut self.log_scale.data_mut()[0];
        if *v > max {
            *v = max;
        }
    }

    pub fn cast<G: Scalar>(&self) -> TemperatureParam<G> {
        TemperatureParam { log_scale: self.log_scale.cast(), clamp_max: self.clamp_max }
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityMatrix<F> {
    pub c: Tensor<F>,
    pub tau: F,
}

#[derive(Debug, Clone)]
pub struct SimCache<F> {
    s_hat: Tensor<F>,
    s_norms: Vec<F>,
    t_hat: Tensor<F>,
    t_norms: Vec<F>,
    cos: Tensor<F>,
    clamped: bool,
}

/// `C = tau * (S_hat . T_hat^T)` with row-normalized embeddings.
pub fn similarity_matrix<F: Scalar>(s: &Tensor<F>, t: &Tensor<F>, temp: &TemperatureParam<F>) -> Result<(SimilarityMatrix<F>, SimCache<F>)> {
    if s.shape().len() != 2 || t.shape().len() != 2 || s.dim(1) != t.dim(1) {
        return Err(Error::arg(format!("embedding shapes {:?} and {:?} are incompatible", s.shape(), t.shape())));
    }
    let (s_hat, s_norms) = ops::l2_normalize_rows(s)?;
    let (t_hat, t_norms) = ops::l2_normalize_rows(t)?;
    let cos = matmul(&s_hat, false, &t_hat, true)?;
    let tau = temp.applied();
    let c = cos.map(|v| v * tau);
    Ok((SimilarityMatrix { c, tau }, SimCache { s_hat, s_norms, t_hat, t_norms, cos, clamped: temp.clamped() }))
}

/// Returns `(dS, dT)` and accumulates the log-scale gradient into `temp`.
pub fn similarity_backward<F: Scalar>(cache: &SimCache<F>, temp: &mut TemperatureParam<F>, tau: F, grad_c: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    if grad_c.shape() != cache.cos.shape() {
        return Err(Error::arg("similarity gradient shape mismatch"));
    }
    let d_tau: F = grad_c.data().iter().zip(cache.cos.data()).map(|(&g, &c)| g * c).sum();
    let d_log = if cache.clamped { F::zero() } else { d_tau * tau };
    temp.log_scale.accumulate_grad(&[d_log]);
    let g_cos = grad_c.map(|g| g * tau);
    let g_s_hat = matmul(&g_cos, false, &cache.t_hat, false)?;
    let g_t_hat = matmul(&g_cos, true, &cache.s_hat, false)?;
    Ok((ops::l2_normalize_rows_backward(&cache.s_hat, &cache.s_norms, &g_s_hat), ops::l2_normalize_rows_backward(&cache.t_hat, &cache.t_norms, &g_t_hat)))
}
