//! Sensor encoder, projection heads and text-embedding providers.

mod head;
mod imu;
mod layers;
mod table;
mod text;

pub use head::{HeadCache, ProjectionHead};
pub use imu::{ImuCache, ImuEncoder, IMU_FEATURE_DIM};
pub use layers::{Conv1dLayer, Linear};
pub use table::{canonical_sentence, verify_table, EmbeddingTable, TableSummary};
pub use text::{bucket, tokenize, HashCache, HashTextEncoder, TextProvider, HASH_BUCKETS, HASH_TEXT_DIM};

use crate::datapipe::SensorWindow;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Default width of the joint embedding space.
pub const JOINT_DIM: usize = 512;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Anything with named trainable tensors.
pub trait Module<F: Scalar> {
    fn named_params(&self) -> Vec<(String, &Tensor<F>)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.numel()).sum()
    }
}

/// A trainable sensor encoder mapping `[B, 3, T]` windows to `[B, feature_dim]`.
pub trait SensorEncoder<F: Scalar>: Module<F> {
    type Cache;

    fn feature_dim(&self) -> usize;

    fn encode(&self, batch: &Tensor<F>, training: bool, seed: u64) -> Result<(Tensor<F>, Self::Cache)>;

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    fn backward(&mut self, cache: &Self::Cache, grad_out: &Tensor<F>) -> Result<Tensor<F>>;
}

/// Packs windows into a channel-major `[B, 3, T]` tensor.
pub fn windows_to_tensor<F: Scalar>(windows: &[SensorWindow]) -> Result<Tensor<F>> {
    let t = windows.first().map_or(0, SensorWindow::len);
    if windows.is_empty() || t == 0 {
        return Err(Error::arg("cannot build a batch from no windows"));
    }
    let mut data = Vec::with_capacity(windows.len() * 3 * t);
    for (i, w) in windows.iter().enumerate() {
        if w.len() != t {
            return Err(Error::arg(format!("window {i} has length {}, expected {t}", w.len())));
        }
        for c in 0..3 {
            data.extend(w.channel(c).map(|v| F::from_f32(v).unwrap()));
        }
    }
    Tensor::new(&[windows.len(), 3, t], data)
}

/// Gathers the given rows of a 2-D tensor.
pub fn gather_rows<F: Scalar>(x: &Tensor<F>, idx: &[usize]) -> Tensor<F> {
    let width = x.dim(1);
    let mut data = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(&[idx.len(), width], data).expect("consistent shape")
}

/// Adjoint of [`gather_rows`]: sums gradient rows back onto their source rows.
pub fn scatter_add_rows<F: Scalar>(grad: &Tensor<F>, idx: &[usize], rows: usize) -> Tensor<F> {
    let width = grad.dim(1);
    let mut out = Tensor::zeros(&[rows, width]);
    for (r, &i) in idx.iter().enumerate() {
        for (o, &g) in out.row_mut(i).iter_mut().zip(grad.row(r)) {
            *o = *o + g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn window_packing_is_channel_major() {
        let w = SensorWindow { samples: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], label: "a".into(), user_id: "u".into() };
        let t: Tensor<f64> = windows_to_tensor(&[w]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(windows_to_tensor::<f32>(&[]).is_err());
    }

    #[test]
    fn gather_scatter_adjoint() {
        let x = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        let g = gather_rows(&x, &[2, 0, 2]);
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let s = scatter_add_rows(&Tensor::from_fn(&[3, 2], |_| 1.0), &[2, 0, 2], 3);
        assert_eq!(s.data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
