use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::Linear;
use super::table::EmbeddingTable;
use super::{fnv1a64, Module};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const HASH_BUCKETS: usize = 4096;
pub const HASH_TEXT_DIM: usize = 768;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

pub fn bucket(token: &str, buckets: usize) -> usize {
    (fnv1a64(token.as_bytes()) % buckets as u64) as usize
}

/// Bag of hashed tokens: mean of bucket embeddings followed by a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HashTextEncoder<F> {
    pub embedding: Tensor<F>,
    pub linear: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct HashCache<F> {
    buckets: Vec<Vec<usize>>,
    mean: Tensor<F>,
}

impl<F: Scalar> HashTextEncoder<F> {
    pub fn new(rng: &mut impl Rng) -> Self {
        Self::with_dims(HASH_BUCKETS, HASH_TEXT_DIM, rng)
    }

    pub fn with_dims(buckets: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let embedding = Tensor::from_fn(&[buckets, dim], |_| F::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)));
        Self { embedding, linear: Linear::new(dim, dim, rng) }
    }

    pub fn dim(&self) -> usize {
        self.embedding.dim(1)
    }

    pub fn buckets(&self) -> usize {
        self.embedding.dim(0)
    }

    pub fn encode(&self, sentences: &[String]) -> Result<(Tensor<F>, HashCache<F>)> {
        let dim = self.dim();
        let mut buckets = Vec::with_capacity(sentences.len());
        let mut mean = Tensor::zeros(&[sentences.len(), dim]);
        for (i, s) in sentences.iter().enumerate() {
            let toks = tokenize(s);
            if toks.is_empty() {
                return Err(Error::arg(format!("sentence {s:?} has no tokens")));
            }
            let ids: Vec<usize> = toks.iter().map(|t| bucket(t, self.buckets())).collect();
            let inv = F::one() / F::from_usize(ids.len()).unwrap();
            let row = mean.row_mut(i);
            for &b in &ids {
                for (m, &e) in row.iter_mut().zip(self.embedding.row(b)) {
                    *m = *m + e;
                }
            }
            row.iter_mut().for_each(|m| *m = *m * inv);
            buckets.push(ids);
        }
        let out = self.linear.forward(&mean)?;
        Ok((out, HashCache { buckets, mean }))
    }

    pub fn backward(&mut self, cache: &HashCache<F>, grad_out: &Tensor<F>) -> Result<()> {
        let g_mean = self.linear.backward(&cache.mean, grad_out)?;
        let dim = self.dim();
        let grad = self.embedding.grad_mut();
        for (i, ids) in cache.buckets.iter().enumerate() {
            let inv = F::one() / F::from_usize(ids.len()).unwrap();
            let g = g_mean.row(i);
            for &b in ids {
                for (acc, &v) in grad[b * dim..(b + 1) * dim].iter_mut().zip(g) {
                    *acc = *acc + v * inv;
                }
            }
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> HashTextEncoder<G> {
        HashTextEncoder { embedding: self.embedding.cast(), linear: self.linear.cast() }
    }
}

impl<F: Scalar> Module<F> for HashTextEncoder<F> {
    fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        vec![("embedding".into(), &self.embedding), ("linear.weight".into(), &self.linear.w), ("linear.bias".into(), &self.linear.b)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![("embedding".into(), &mut self.embedding), ("linear.weight".into(), &mut self.linear.w), ("linear.bias".into(), &mut self.linear.b)]
    }
}

/// Source of sentence vectors: a trainable hash encoder or a frozen lookup table.
#[derive(Debug, Clone, PartialEq)]
pub enum TextProvider<F> {
    Hash(HashTextEncoder<F>),
    Table(EmbeddingTable),
}

impl<F: Scalar> TextProvider<F> {
    pub fn kind(&self) -> &'static str {
        match self {
            TextProvider::Hash(_) => "hash_trainable",
            TextProvider::Table(_) => "precomputed_table",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TextProvider::Hash(h) => h.dim(),
            TextProvider::Table(t) => t.dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, TextProvider::Hash(_))
    }

    pub fn encode(&self, sentences: &[String]) -> Result<(Tensor<F>, Option<HashCache<F>>)> {
        match self {
            TextProvider::Hash(h) => {
                let (t, c) = h.encode(sentences)?;
                Ok((t, Some(c)))
            }
            TextProvider::Table(table) => {
                let dim = table.dim();
                let mut data = Vec::with_capacity(sentences.len() * dim);
                for s in sentences {
                    data.extend(table.get(s)?.iter().map(|&v| F::from_f32(v).unwrap()));
                }
                Ok((Tensor::new(&[sentences.len(), dim], data)?, None))
            }
        }
    }

    pub fn backward(&mut self, cache: Option<&HashCache<F>>, grad_out: &Tensor<F>) -> Result<()> {
        match (self, cache) {
            (TextProvider::Hash(h), Some(c)) => h.backward(c, grad_out),
            (TextProvider::Hash(_), None) => Err(Error::arg("hash encoder backward needs its forward cache")),
            (TextProvider::Table(_), _) => Ok(()),
        }
    }

    pub fn cast<G: Scalar>(&self) -> TextProvider<G> {
        match self {
            TextProvider::Hash(h) => TextProvider::Hash(h.cast()),
            TextProvider::Table(t) => TextProvider::Table(t.clone()),
        }
    }
}

impl<F: Scalar> Module<F> for TextProvider<F> {
    fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        match self {
            TextProvider::Hash(h) => h.named_params(),
            TextProvider::Table(_) => Vec::new(),
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        match self {
            TextProvider::Hash(h) => h.named_params_mut(),
            TextProvider::Table(_) => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn enc() -> HashTextEncoder<f64> {
        HashTextEncoder::with_dims(64, 8, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn tokenizer_splits_on_punctuation() {
        assert_eq!(tokenize("Walking, up-stairs!  x2"), vec!["walking", "up", "stairs", "x2"]);
        assert!(tokenize(" ;; ").is_empty());
    }

    #[test]
    fn whitespace_variants_encode_identically() {
        let e = enc();
        let (a, _) = e.encode(&["walking".into(), "walking ".into(), "WALKING".into()]).unwrap();
        assert_eq!(a.row(0), a.row(1));
        assert_eq!(a.row(0), a.row(2));
        assert!(e.encode(&["...".into()]).is_err());
    }

    #[test]
    fn single_token_matches_direct_formula() {
        let e = enc();
        let (out, _) = e.encode(&["sitting".into()]).unwrap();
        let b = bucket("sitting", 64);
        let x = Tensor::new(&[1, 8], e.embedding.row(b).to_vec()).unwrap();
        let direct = crate::numerics::ops::linear(&x, &e.linear.w, &e.linear.b).unwrap();
        assert_eq!(out.data(), direct.data());
    }

    #[test]
    fn default_dims() {
        let e: HashTextEncoder<f32> = HashTextEncoder::new(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        assert_eq!(e.embedding.shape(), &[HASH_BUCKETS, HASH_TEXT_DIM]);
        assert_eq!(e.linear.w.shape(), &[768, 768]);
    }
}
