use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference check of every coordinate of every input.
///
/// `f` returns the scalar value and the analytic gradient with respect to each input.
pub fn grad_check<G>(f: G, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    G: Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    Ok(check(&f, inputs, h, None, 0)?.max_rel_error)
}

/// As [`grad_check`], but perturbs at most `per_input` randomly chosen coordinates of
/// each input. Used for full-model checks where exhaustive enumeration is too slow.
pub fn grad_check_sampled<G>(f: G, inputs: &[Tensor<f64>], h: f64, per_input: usize, seed: u64) -> Result<GradCheckReport>
where
    G: Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    check(&f, inputs, h, Some(per_input), seed)
}

fn check<G>(f: &G, inputs: &[Tensor<f64>], h: f64, per_input: Option<usize>, seed: u64) -> Result<GradCheckReport>
where
    G: Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    let (_, analytic) = f(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(Error::arg("gradient list length differs from inputs"));
    }
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut rng = rng::stream(seed, &[0x6c]);
    for (which, grad) in analytic.iter().enumerate() {
        let n = inputs[which].numel();
        if grad.numel() != n {
            return Err(Error::arg(format!("gradient {which} has wrong size")));
        }
        let coords: Vec<usize> = match per_input {
            Some(k) if k < n => {
                let mut picked = BTreeSet::new();
                while picked.len() < k {
                    picked.insert(rng.random_range(0..n));
                }
                picked.into_iter().collect()
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = work[which].data()[c];
            work[which].data_mut()[c] = orig + h;
            let (plus, _) = f(&work)?;
            work[which].data_mut()[c] = orig - h;
            let (minus, _) = f(&work)?;
            work[which].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[c], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, c));
            }
        }
    }
    Ok(report)
}
