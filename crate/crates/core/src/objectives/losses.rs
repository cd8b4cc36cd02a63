use crate::error::{Error, Result};
use crate::numerics::ops::{self, softmax_xent_rows};
use crate::numerics::{matmul, Scalar, Tensor};

/// Default SimCLR temperature.
pub const NT_XENT_TAU: f64 = 0.1;

fn check_square<F: Scalar>(c: &Tensor<F>) -> Result<usize> {
    let s = c.shape();
    if s.len() != 2 || s[0] != s[1] || s[0] == 0 {
        return Err(Error::arg(format!("similarity matrix must be square and nonempty, got {s:?}")));
    }
    Ok(s[0])
}

fn identity<F: Scalar>(n: usize) -> Tensor<F> {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { F::one() } else { F::zero() })
}

/// Symmetric cross entropy against identity targets. Returns `(loss, dL/dC)`.
pub fn clip_loss<F: Scalar>(c: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    let n = check_square(c)?;
    symmetric_xent(c, &identity(n), &identity(n))
}

fn symmetric_xent<F: Scalar>(c: &Tensor<F>, rows: &Tensor<F>, cols: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    let half = F::from_f64_lossy(0.5);
    let (l1, g1) = softmax_xent_rows(c, rows)?;
    let (l2, g2) = softmax_xent_rows(&c.transpose2(), cols)?;
    let g2t = g2.transpose2();
    let grad = Tensor::new(c.shape(), g1.data().iter().zip(g2t.data()).map(|(&a, &b)| half * (a + b)).collect())?;
    Ok((half * (l1 + l2), grad))
}

/// Row-normalized label-equality matrix.
pub fn unicl_target_matrix<F: Scalar>(labels: &[String]) -> Tensor<F> {
    let n = labels.len();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let count = labels.iter().filter(|l| **l == labels[i]).count();
        let w = F::one() / F::from_usize(count).unwrap();
        for (j, v) in m.row_mut(i).iter_mut().enumerate() {
            if labels[j] == labels[i] {
                *v = w;
            }
        }
    }
    m
}

/// Multi-positive symmetric loss; the text direction uses the transposed targets
/// with rows renormalized.
pub fn unicl_loss<F: Scalar>(c: &Tensor<F>, targets: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    check_square(c)?;
    if targets.shape() != c.shape() {
        return Err(Error::arg("target matrix shape must match the similarity matrix"));
    }
    ops::validate_target_rows(targets)?;
    let mut cols = targets.transpose2();
    for i in 0..cols.dim(0) {
        let sum: F = cols.row(i).iter().copied().sum();
        if !(sum > F::zero()) {
            return Err(Error::arg(format!("target column {i} has no positive entry")));
        }
        cols.row_mut(i).iter_mut().for_each(|v| *v = *v / sum);
    }
    symmetric_xent(c, targets, &cols)
}

#[derive(Debug, Clone)]
pub struct NtXentOutput<F> {
    pub loss: F,
    pub grad_z1: Tensor<F>,
    pub grad_z2: Tensor<F>,
}

/// SimCLR loss over `2N` views; the positive of view `i` is view `i ± N`.
pub fn nt_xent<F: Scalar>(z1: &Tensor<F>, z2: &Tensor<F>, tau_s: f64) -> Result<NtXentOutput<F>> {
    if z1.shape() != z2.shape() || z1.shape().len() != 2 {
        return Err(Error::arg("nt_xent views must share a 2-D shape"));
    }
    let n = z1.dim(0);
    if n < 2 {
        return Err(Error::arg(format!("nt_xent needs at least 2 pairs, got {n}")));
    }
    if !(tau_s > 0.0) {
        return Err(Error::arg("nt_xent temperature must be positive"));
    }
    let d = z1.dim(1);
    let m = 2 * n;
    let z = Tensor::new(&[m, d], [z1.data(), z2.data()].concat())?;
    let (zh, norms) = ops::l2_normalize_rows(&z)?;
    let inv_tau = F::from_f64_lossy(1.0 / tau_s);
    let sim = matmul(&zh, false, &zh, true)?.map(|v| v * inv_tau);
    let inv_m = F::one() / F::from_usize(m).unwrap();
    let mut loss = F::zero();
    let mut g_sim = Tensor::zeros(&[m, m]);
    for i in 0..m {
        let pos = (i + n) % m;
        let row = sim.row(i);
        let max = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(F::neg_infinity(), F::max);
        let sum: F = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss = loss + (lse - row[pos]);
        let g = g_sim.row_mut(i);
        for j in 0..m {
            if j == i {
                continue;
            }
            let t = if j == pos { F::one() } else { F::zero() };
            g[j] = ((row[j] - lse).exp() - t) * inv_m;
        }
    }
    // sim = zh zh^T / tau, so d zh = (G + G^T) zh / tau.
    let sym = Tensor::new(&[m, m], g_sim.data().iter().zip(g_sim.transpose2().data()).map(|(&a, &b)| (a + b) * inv_tau).collect())?;
    let g_zh = matmul(&sym, false, &zh, false)?;
    let g_z = ops::l2_normalize_rows_backward(&zh, &norms, &g_zh);
    let (a, b) = g_z.data().split_at(n * d);
    Ok(NtXentOutput { loss: loss * inv_m, grad_z1: Tensor::new(&[n, d], a.to_vec())?, grad_z2: Tensor::new(&[n, d], b.to_vec())? })
}

#[derive(Debug, Clone)]
pub struct SlipOutput<F> {
    pub loss: F,
    pub clip: F,
    pub ssl: F,
    pub grad_c: Tensor<F>,
    pub grad_z1: Tensor<F>,
    pub grad_z2: Tensor<F>,
}

/// `clip_loss + lambda * nt_xent`.
pub fn slip_loss<F: Scalar>(c: &Tensor<F>, z1: &Tensor<F>, z2: &Tensor<F>, lambda: f64, tau_s: f64) -> Result<SlipOutput<F>> {
    let (clip, grad_c) = clip_loss(c)?;
    let nt = nt_xent(z1, z2, tau_s)?;
    let lam = F::from_f64_lossy(lambda);
    Ok(SlipOutput { loss: clip + lam * nt.loss, clip, ssl: nt.loss, grad_c, grad_z1: nt.grad_z1.map(|g| g * lam), grad_z2: nt.grad_z2.map(|g| g * lam) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn constant_matrix_gives_ln_n() {
        for n in [2usize, 8, 64] {
            let c = Tensor::<f64>::from_fn(&[n, n], |_| 3.7);
            let (l, _) = clip_loss(&c).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_diagonal_is_near_zero() {
        let c = Tensor::<f64>::from_fn(&[5, 5], |i| if i % 6 == 0 { 1000.0 } else { 0.0 });
        assert!(clip_loss(&c).unwrap().0 < 1e-6);
        assert!(clip_loss(&Tensor::<f64>::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn unicl_targets() {
        let m: Tensor<f64> = unicl_target_matrix(&labels(&["a", "a", "b"]));
        assert_eq!(m.row(0), &[0.5, 0.5, 0.0]);
        assert_eq!(m.row(2), &[0.0, 0.0, 1.0]);
        let id: Tensor<f64> = unicl_target_matrix(&labels(&["x", "y", "z"]));
        assert_eq!(id, identity(3));
    }

    #[test]
    fn unicl_matches_clip_for_distinct_labels() {
        let c = Tensor::<f64>::from_fn(&[4, 4], |i| ((i * 7919) % 13) as f64 * 0.3 - 1.0);
        let (a, ga) = clip_loss(&c).unwrap();
        let (b, gb) = unicl_loss(&c, &unicl_target_matrix(&labels(&["p", "q", "r", "s"]))).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn unicl_rejects_bad_targets() {
        let c = Tensor::<f64>::zeros(&[2, 2]);
        let t = Tensor::new(&[2, 2], vec![0.5, 0.4, 0.0, 1.0]).unwrap();
        assert!(unicl_loss(&c, &t).is_err());
    }

    #[test]
    fn nt_xent_needs_two_pairs() {
        let z = Tensor::<f64>::from_fn(&[1, 4], |i| i as f64 + 1.0);
        assert!(nt_xent(&z, &z, 0.1).is_err());
    }

    #[test]
    fn nt_xent_orthonormal_reference() {
        // Positives have cosine 1, every negative cosine 0.
        let n = 3;
        let z = Tensor::<f64>::from_fn(&[n, n], |i| if i % (n + 1) == 0 { 1.0 } else { 0.0 });
        let out = nt_xent(&z, &z, 0.1).unwrap();
        let e = 10f64.exp();
        let expect = -(e / (e + (2 * n - 2) as f64)).ln();
        assert!((out.loss - expect).abs() < 1e-5);
    }

    #[test]
    fn slip_with_zero_lambda_is_clip() {
        let c = Tensor::<f64>::from_fn(&[3, 3], |i| i as f64 * 0.1);
        let z1 = Tensor::<f64>::from_fn(&[3, 2], |i| (i as f64).sin() + 0.1);
        let z2 = Tensor::<f64>::from_fn(&[3, 2], |i| (i as f64).cos() + 0.1);
        let out = slip_loss(&c, &z1, &z2, 0.0, 0.1).unwrap();
        assert_eq!(out.loss, clip_loss(&c).unwrap().0);
        assert!(out.grad_z1.data().iter().chain(out.grad_z2.data()).all(|&g| g == 0.0));
    }
}
