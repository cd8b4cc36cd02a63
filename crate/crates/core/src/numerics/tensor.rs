use crate::error::{Error, Result};

use super::Scalar;

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::arg(format!("shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![F::zero(); numel], grad: None }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect(), grad: None }
    }

    /// Builds an `[rows.len(), width]` matrix.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::arg("ragged rows"));
        }
        Self::new(&[rows.len(), width], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Size of dimension `dim`; panics if out of range.
    pub fn dim(&self, dim: usize) -> usize {
        self.shape[dim]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [F] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![F::zero(); n])
    }

    /// Adds `g` elementwise into the gradient buffer.
    pub fn accumulate_grad(&mut self, g: &[F]) {
        debug_assert_eq!(g.len(), self.data.len());
        for (acc, v) in self.grad_mut().iter_mut().zip(g) {
            *acc = *acc + *v;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::arg(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[F] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn transpose2(&self) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data: out, grad: None }
    }

    /// Element type conversion; the gradient buffer is dropped.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect(), grad: None }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }
}

/// `a[m,k] @ b[k,n]` with optional transposes of the stored operands.
///
/// With `trans_a`, `a` is stored as `[k,m]`; with `trans_b`, `b` is stored as `[n,k]`.
pub fn matmul<F: Scalar>(a: &Tensor<F>, trans_a: bool, b: &Tensor<F>, trans_b: bool) -> Result<Tensor<F>> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::arg("matmul needs 2-D operands"));
    }
    let (m, ka) = if trans_a { (a.shape[1], a.shape[0]) } else { (a.shape[0], a.shape[1]) };
    let (kb, n) = if trans_b { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
    if ka != kb {
        return Err(Error::arg(format!("matmul inner dims {ka} vs {kb}")));
    }
    let sa = if trans_a { (1, m as isize) } else { (ka as isize, 1) };
    let sb = if trans_b { (1, ka as isize) } else { (n as isize, 1) };
    let mut out = vec![F::zero(); m * n];
    F::gemm(m, ka, n, F::one(), &a.data, sa, &b.data, sb, F::zero(), &mut out, (n as isize, 1));
    Tensor::new(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_len() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = Tensor::<f64>::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = matmul(&a, false, &b, false).unwrap();
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);
        let at = a.transpose2();
        let bt = b.transpose2();
        assert_eq!(matmul(&at, true, &bt, true).unwrap().data(), ab.data());
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut t = Tensor::<f32>::zeros(&[4, 2]);
        t.accumulate_grad(&[1.0; 8]);
        assert_eq!(t.grad().unwrap().len(), t.numel());
        t.zero_grad();
        assert!(t.grad().unwrap().iter().all(|&g| g == 0.0));
    }
}
