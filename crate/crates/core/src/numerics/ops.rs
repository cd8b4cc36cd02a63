//! Forward and backward kernels for the fixed operator set.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Mirror around the edge sample without repeating it.
    Reflect,
    Zero,
}

fn source_index(p: isize, len: usize, padding: Padding) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&p) {
        return Some(p as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            let q = if p < 0 { -p } else { 2 * (n - 1) - p };
            Some(q as usize)
        }
    }
}

/// Pads a 1-D sequence. Exposed for tests of the padding convention.
pub fn pad_sequence<F: Scalar>(x: &[F], pad: usize, padding: Padding) -> Result<Vec<F>> {
    if padding == Padding::Reflect && x.len() <= pad {
        return Err(Error::arg(format!("reflect padding of {pad} needs at least {} samples", pad + 1)));
    }
    Ok((-(pad as isize)..(x.len() + pad) as isize).map(|p| source_index(p, x.len(), padding).map_or(F::zero(), |i| x[i])).collect())
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
}

fn conv_dims<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, padding: Padding) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 {
        return Err(Error::arg(format!("conv1d expects x[B,C,T] and w[O,C,K], got {xs:?} and {ws:?}")));
    }
    if xs[1] != ws[1] {
        return Err(Error::arg(format!("conv1d channel mismatch: input {} vs weight {}", xs[1], ws[1])));
    }
    let kernel = ws[2];
    if kernel % 2 == 0 {
        return Err(Error::arg("conv1d kernel size must be odd"));
    }
    let pad = (kernel - 1) / 2;
    if padding == Padding::Reflect && xs[2] < pad + 1 {
        return Err(Error::arg(format!("sequence of {} too short for reflect pad {pad}", xs[2])));
    }
    Ok(ConvDims { batch: xs[0], c_in: xs[1], c_out: ws[0], len: xs[2], kernel })
}

/// Column matrix `[C_in*K, T]` for one batch element.
fn im2col<F: Scalar>(x: &[F], d: &ConvDims, padding: Padding, cols: &mut [F]) {
    let pad = (d.kernel - 1) as isize / 2;
    for ci in 0..d.c_in {
        let src = &x[ci * d.len..(ci + 1) * d.len];
        for k in 0..d.kernel {
            let row = &mut cols[(ci * d.kernel + k) * d.len..(ci * d.kernel + k + 1) * d.len];
            for (t, slot) in row.iter_mut().enumerate() {
                let p = t as isize + k as isize - pad;
                *slot = source_index(p, d.len, padding).map_or(F::zero(), |i| src[i]);
            }
        }
    }
}

/// 1-D cross-correlation with "same" output length.
///
/// `x: [B, C_in, T]`, `w: [C_out, C_in, K]`, `b: [C_out]` -> `[B, C_out, T]`.
pub fn conv1d<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, padding: Padding) -> Result<Tensor<F>> {
    let d = conv_dims(x, w, padding)?;
    if b.numel() != d.c_out {
        return Err(Error::arg("conv1d bias length must equal output channels"));
    }
    let ck = d.c_in * d.kernel;
    let mut cols = vec![F::zero(); ck * d.len];
    let mut out = vec![F::zero(); d.batch * d.c_out * d.len];
    for bi in 0..d.batch {
        let xb = &x.data()[bi * d.c_in * d.len..(bi + 1) * d.c_in * d.len];
        im2col(xb, &d, padding, &mut cols);
        let yb = &mut out[bi * d.c_out * d.len..(bi + 1) * d.c_out * d.len];
        for (o, row) in yb.chunks_mut(d.len).enumerate() {
            row.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        F::gemm(d.c_out, ck, d.len, F::one(), w.data(), (ck as isize, 1), &cols, (d.len as isize, 1), F::one(), yb, (d.len as isize, 1));
    }
    Tensor::new(&[d.batch, d.c_out, d.len], out)
}

#[derive(Debug, Clone)]
pub struct Conv1dGrads<F> {
    pub x: Tensor<F>,
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

pub fn conv1d_backward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, grad_out: &Tensor<F>, padding: Padding) -> Result<Conv1dGrads<F>> {
    let d = conv_dims(x, w, padding)?;
    if grad_out.shape() != [d.batch, d.c_out, d.len] {
        return Err(Error::arg("conv1d_backward grad shape mismatch"));
    }
    let ck = d.c_in * d.kernel;
    let pad = (d.kernel - 1) as isize / 2;
    let mut cols = vec![F::zero(); ck * d.len];
    let mut gcols = vec![F::zero(); ck * d.len];
    let mut gw = vec![F::zero(); d.c_out * ck];
    let mut gb = vec![F::zero(); d.c_out];
    let mut gx = vec![F::zero(); x.numel()];
    for bi in 0..d.batch {
        let xb = &x.data()[bi * d.c_in * d.len..(bi + 1) * d.c_in * d.len];
        let gy = &grad_out.data()[bi * d.c_out * d.len..(bi + 1) * d.c_out * d.len];
        im2col(xb, &d, padding, &mut cols);
        for (o, row) in gy.chunks(d.len).enumerate() {
            gb[o] = gb[o] + row.iter().copied().sum::<F>();
        }
        // gW += gy[O,T] . cols^T[T,CK]
        F::gemm(d.c_out, d.len, ck, F::one(), gy, (d.len as isize, 1), &cols, (1, d.len as isize), F::one(), &mut gw, (ck as isize, 1));
        // gcols = W^T[CK,O] . gy[O,T]
        F::gemm(ck, d.c_out, d.len, F::one(), w.data(), (1, ck as isize), gy, (d.len as isize, 1), F::zero(), &mut gcols, (d.len as isize, 1));
        let gxb = &mut gx[bi * d.c_in * d.len..(bi + 1) * d.c_in * d.len];
        for ci in 0..d.c_in {
            for k in 0..d.kernel {
                let row = &gcols[(ci * d.kernel + k) * d.len..(ci * d.kernel + k + 1) * d.len];
                for (t, &g) in row.iter().enumerate() {
                    if let Some(i) = source_index(t as isize + k as isize - pad, d.len, padding) {
                        gxb[ci * d.len + i] = gxb[ci * d.len + i] + g;
                    }
                }
            }
        }
    }
    Ok(Conv1dGrads { x: Tensor::new(x.shape(), gx)?, w: Tensor::new(w.shape(), gw)?, b: Tensor::new(&[d.c_out], gb)? })
}

/// `y = x . w^T + b` with `x: [B, F_in]`, `w: [F_out, F_in]`.
pub fn linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.numel() != ws[0] {
        return Err(Error::arg(format!("linear shape mismatch: x {xs:?}, w {ws:?}, b {:?}", b.shape())));
    }
    let (batch, f_in, f_out) = (xs[0], xs[1], ws[0]);
    let mut out = vec![F::zero(); batch * f_out];
    for row in out.chunks_mut(f_out) {
        row.copy_from_slice(b.data());
    }
    F::gemm(batch, f_in, f_out, F::one(), x.data(), (f_in as isize, 1), w.data(), (1, f_in as isize), F::one(), &mut out, (f_out as isize, 1));
    Tensor::new(&[batch, f_out], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<F> {
    pub x: Tensor<F>,
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

pub fn linear_backward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, grad_out: &Tensor<F>) -> Result<LinearGrads<F>> {
    let (batch, f_in, f_out) = (x.dim(0), x.dim(1), w.dim(0));
    if grad_out.shape() != [batch, f_out] || w.dim(1) != f_in {
        return Err(Error::arg("linear_backward shape mismatch"));
    }
    let gx = super::matmul(grad_out, false, w, false)?;
    let gw = super::matmul(grad_out, true, x, false)?;
    let mut gb = vec![F::zero(); f_out];
    for row in grad_out.data().chunks(f_out) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    Ok(LinearGrads { x: gx, w: gw, b: Tensor::new(&[f_out], gb)? })
}

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Subgradient at zero is zero.
pub fn relu_backward<F: Scalar>(x: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > F::zero() { g } else { F::zero() }).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Inverted dropout. Returns the output and the multiplicative mask (absent when
/// the op is the identity).
pub fn dropout<F: Scalar>(x: &Tensor<F>, p: f64, training: bool, seed: u64) -> Result<(Tensor<F>, Option<Vec<F>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = rng::stream(seed, &[0xd0]);
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..x.numel()).map(|_| if rng.random::<f64>() < p { F::zero() } else { keep }).collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<F: Scalar>(mask: Option<&[F]>, grad_out: &Tensor<F>) -> Tensor<F> {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::new(grad_out.shape(), data).expect("same shape")
        }
    }
}

/// Maximum over the last axis of `[B, C, T]`. Returns `[B, C]` and the first argmax
/// index for each output.
pub fn max_over_time<F: Scalar>(x: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 3 || s[2] == 0 {
        return Err(Error::arg(format!("max_over_time expects [B,C,T>=1], got {s:?}")));
    }
    let t_len = s[2];
    let mut vals = Vec::with_capacity(s[0] * s[1]);
    let mut idx = Vec::with_capacity(s[0] * s[1]);
    for row in x.data().chunks(t_len) {
        let mut best = 0;
        for (t, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = t;
            }
        }
        vals.push(row[best]);
        idx.push(best);
    }
    Ok((Tensor::new(&[s[0], s[1]], vals)?, idx))
}

pub fn max_over_time_backward<F: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let t_len = input_shape[2];
    let mut g = Tensor::zeros(input_shape);
    let data = g.data_mut();
    for (row, (&i, &go)) in argmax.iter().zip(grad_out.data()).enumerate() {
        data[row * t_len + i] = go;
    }
    g
}

/// Mean cross entropy of row softmaxes against row-stochastic targets.
///
/// Returns `(loss, d loss / d logits)`.
pub fn softmax_xent_rows<F: Scalar>(logits: &Tensor<F>, targets: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    let s = logits.shape();
    if s.len() != 2 || targets.shape() != s {
        return Err(Error::arg(format!("softmax_xent_rows expects matching 2-D shapes, got {s:?} and {:?}", targets.shape())));
    }
    let (n, m) = (s[0], s[1]);
    validate_target_rows(targets)?;
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); n * m];
    for i in 0..n {
        let row = logits.row(i);
        let t = targets.row(i);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let sum_exp: F = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        for j in 0..m {
            let logp = row[j] - lse;
            if t[j] > F::zero() {
                loss = loss - t[j] * logp;
            }
            grad[i * m + j] = (logp.exp() - t[j]) * inv_n;
        }
    }
    Ok((loss * inv_n, Tensor::new(s, grad)?))
}

pub(crate) fn validate_target_rows<F: Scalar>(targets: &Tensor<F>) -> Result<()> {
    let tol = F::from_f64_lossy(1e-5);
    for i in 0..targets.dim(0) {
        let row = targets.row(i);
        if row.iter().any(|&v| v < F::zero() || !v.is_finite()) {
            return Err(Error::arg(format!("target row {i} has negative or non-finite entries")));
        }
        let sum: F = row.iter().copied().sum();
        if (sum - F::one()).abs() > tol {
            return Err(Error::arg(format!("target row {i} sums to {sum}, expected 1")));
        }
    }
    Ok(())
}

pub const NORM_EPS: f64 = 1e-12;

/// Divides each row by its L2 norm. Returns the normalized rows and the norms.
pub fn l2_normalize_rows<F: Scalar>(x: &Tensor<F>) -> Result<(Tensor<F>, Vec<F>)> {
    if x.shape().len() != 2 {
        return Err(Error::arg("l2_normalize_rows expects a 2-D tensor"));
    }
    let eps = F::from_f64_lossy(NORM_EPS);
    let mut out = x.clone();
    out.clear_grad();
    let mut norms = Vec::with_capacity(x.dim(0));
    for i in 0..x.dim(0) {
        let norm = x.row(i).iter().map(|&v| v * v).sum::<F>().sqrt();
        if !(norm > eps) {
            return Err(Error::NumericGuard { row: i, message: format!("row norm {norm} below {NORM_EPS}") });
        }
        out.row_mut(i).iter_mut().for_each(|v| *v = *v / norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

pub fn l2_normalize_rows_backward<F: Scalar>(normalized: &Tensor<F>, norms: &[F], grad_out: &Tensor<F>) -> Tensor<F> {
    let mut g = Tensor::zeros(normalized.shape());
    for (i, &norm) in norms.iter().enumerate() {
        let y = normalized.row(i);
        let gy = grad_out.row(i);
        let dot: F = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
        for ((out, &yv), &gv) in g.row_mut(i).iter_mut().zip(y).zip(gy) {
            *out = (gv - yv * dot) / norm;
        }
    }
    g
}

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Per-feature normalization of `[B, F]` with batch statistics.
#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    pub normalized: Tensor<F>,
    pub inv_std: Vec<F>,
    pub mean: Vec<F>,
    /// Biased batch variance.
    pub var: Vec<F>,
}

pub fn batch_norm_train<F: Scalar>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<(Tensor<F>, BatchNormCache<F>)> {
    let (b, f) = (x.dim(0), x.dim(1));
    if gamma.numel() != f || beta.numel() != f {
        return Err(Error::arg("batch norm affine parameters must match feature count"));
    }
    if b < 2 {
        return Err(Error::arg("batch norm training needs at least two rows"));
    }
    let nb = F::from_usize(b).unwrap();
    let eps = F::from_f64_lossy(BATCH_NORM_EPS);
    let mut mean = vec![F::zero(); f];
    let mut var = vec![F::zero(); f];
    for row in x.data().chunks(f) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / nb);
    for row in x.data().chunks(f) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s = *s + (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s = *s / nb);
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(&[b, f]);
    let mut y = Tensor::zeros(&[b, f]);
    for i in 0..b {
        for j in 0..f {
            let xh = (x.data()[i * f + j] - mean[j]) * inv_std[j];
            normalized.data_mut()[i * f + j] = xh;
            y.data_mut()[i * f + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    Ok((y, BatchNormCache { normalized, inv_std, mean, var }))
}

pub fn batch_norm_infer<F: Scalar>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>, running_mean: &[F], running_var: &[F]) -> Tensor<F> {
    let f = x.dim(1);
    let eps = F::from_f64_lossy(BATCH_NORM_EPS);
    let mut y = x.clone();
    y.clear_grad();
    for row in y.data_mut().chunks_mut(f) {
        for (j, v) in row.iter_mut().enumerate() {
            let xh = (*v - running_mean[j]) / (running_var[j] + eps).sqrt();
            *v = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    y
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<F> {
    pub x: Tensor<F>,
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

pub fn batch_norm_backward<F: Scalar>(cache: &BatchNormCache<F>, gamma: &Tensor<F>, grad_out: &Tensor<F>) -> BatchNormGrads<F> {
    let (b, f) = (grad_out.dim(0), grad_out.dim(1));
    let nb = F::from_usize(b).unwrap();
    let xh = cache.normalized.data();
    let gy = grad_out.data();
    let mut g_gamma = vec![F::zero(); f];
    let mut g_beta = vec![F::zero(); f];
    for i in 0..b {
        for j in 0..f {
            g_gamma[j] = g_gamma[j] + gy[i * f + j] * xh[i * f + j];
            g_beta[j] = g_beta[j] + gy[i * f + j];
        }
    }
    // d xhat = gy * gamma; sums of d xhat equal g_beta*gamma and g_gamma*gamma.
    let mut gx = vec![F::zero(); b * f];
    for i in 0..b {
        for j in 0..f {
            let dxh = gy[i * f + j] * gamma.data()[j];
            let sum_dxh = g_beta[j] * gamma.data()[j];
            let sum_dxh_xh = g_gamma[j] * gamma.data()[j];
            gx[i * f + j] = cache.inv_std[j] / nb * (nb * dxh - sum_dxh - xh[i * f + j] * sum_dxh_xh);
        }
    }
    BatchNormGrads { x: Tensor::new(&[b, f], gx).unwrap(), gamma: Tensor::new(&[f], g_gamma).unwrap(), beta: Tensor::new(&[f], g_beta).unwrap() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let padded = pad_sequence(&[1.0f64, 2.0, 3.0], 1, Padding::Reflect).unwrap();
        assert_eq!(padded, vec![2.0, 1.0, 2.0, 3.0, 2.0]);
        assert!(pad_sequence(&[1.0f64], 1, Padding::Reflect).is_err());
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let w = t(&[1, 1, 3], &[0.0, 1.0, 0.0]);
        let b = t(&[1], &[0.0]);
        let y = conv1d(&x, &w, &b, Padding::Reflect).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_uses_reflected_edges() {
        // [2,1,2,3,2] correlated with [1,0,0] picks the left neighbour.
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let w = t(&[1, 1, 3], &[1.0, 0.0, 0.0]);
        let y = conv1d(&x, &w, &t(&[1], &[0.0]), Padding::Reflect).unwrap();
        assert_eq!(y.data(), &[2.0, 1.0, 2.0]);
        let w = t(&[1, 1, 3], &[0.0, 0.0, 1.0]);
        let y = conv1d(&x, &w, &t(&[1], &[0.5]), Padding::Reflect).unwrap();
        assert_eq!(y.data(), &[2.5, 3.5, 2.5]);
    }

    #[test]
    fn conv_shape_errors() {
        let x = t(&[1, 2, 4], &[0.0; 8]);
        let w = t(&[1, 3, 3], &[0.0; 9]);
        assert!(conv1d(&x, &w, &t(&[1], &[0.0]), Padding::Reflect).is_err());
        let short = t(&[1, 1, 1], &[0.0]);
        let w = t(&[1, 1, 3], &[0.0; 3]);
        assert!(conv1d(&short, &w, &t(&[1], &[0.0]), Padding::Reflect).is_err());
        let even = t(&[1, 1, 2], &[0.0; 2]);
        assert!(conv1d(&x.clone().reshape(&[1, 1, 8]).unwrap(), &even, &t(&[1], &[0.0]), Padding::Zero).is_err());
    }

    #[test]
    fn linear_arithmetic() {
        let y = linear(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 2], &[3.0, 4.0]), &t(&[1], &[5.0])).unwrap();
        assert_eq!(y.data(), &[16.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let x = t(&[2, 2], &[0.3, -1.0, 2.0, 4.0]);
        assert_eq!(linear(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap().data(), x.data());
        assert!(linear(&x, &t(&[1, 3], &[0.0; 3]), &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&t(&[3], &[-1.0, -3.0, -0.1])).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&t(&[3], &[-1.0, 0.0, 2.0]), &t(&[3], &[5.0, 5.0, 5.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dropout(&x, 0.0, true, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, false, 1).unwrap().0, x);
        assert!(dropout(&x, 1.0, true, 1).is_err());
        let ones = Tensor::<f64>::from_fn(&[10_000], |_| 1.0);
        let (y, _) = dropout(&ones, 0.5, true, 9).unwrap();
        let mean = y.sum() / 10_000.0;
        assert!((0.9..=1.1).contains(&mean), "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn max_over_time_routes_to_first_argmax() {
        let x = t(&[1, 1, 3], &[1.0, 5.0, 2.0]);
        let (y, idx) = max_over_time(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let g = max_over_time_backward(x.shape(), &idx, &t(&[1, 1], &[1.0]));
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
        let tie = t(&[1, 1, 3], &[4.0, 4.0, 1.0]);
        assert_eq!(max_over_time(&tie).unwrap().1, vec![0]);
        let single = t(&[2, 1, 1], &[3.0, -2.0]);
        assert_eq!(max_over_time(&single).unwrap().0.data(), &[3.0, -2.0]);
    }

    #[test]
    fn xent_uniform_and_saturated() {
        let m = 7;
        let logits = Tensor::<f64>::from_fn(&[3, m], |_| 0.25);
        let targets = Tensor::<f64>::from_fn(&[3, m], |i| if i % m == i / m { 1.0 } else { 0.0 });
        let (loss, _) = softmax_xent_rows(&logits, &targets).unwrap();
        assert!((loss - (m as f64).ln()).abs() < 1e-6);

        let logits = Tensor::<f32>::from_fn(&[2, 2], |i| if i == 0 || i == 3 { 1000.0 } else { 0.0 });
        let targets = Tensor::<f32>::from_fn(&[2, 2], |i| if i == 0 || i == 3 { 1.0 } else { 0.0 });
        let (loss, g) = softmax_xent_rows(&logits, &targets).unwrap();
        assert!(loss < 1e-6 && loss.is_finite());
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn xent_rejects_bad_targets() {
        let logits = Tensor::<f64>::zeros(&[2, 2]);
        assert!(softmax_xent_rows(&logits, &t(&[2, 2], &[0.5, 0.4, 1.0, 0.0])).is_err());
        assert!(softmax_xent_rows(&logits, &t(&[2, 2], &[1.5, -0.5, 1.0, 0.0])).is_err());
    }

    #[test]
    fn l2_normalize_guards_zero_rows() {
        let x = t(&[2, 2], &[3.0, 4.0, 0.0, 0.0]);
        match l2_normalize_rows(&x) {
            Err(Error::NumericGuard { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected guard error, got {other:?}"),
        }
        let (y, n) = l2_normalize_rows(&t(&[1, 2], &[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[0.6, 0.8]);
        assert_eq!(n, vec![5.0]);
    }
}
