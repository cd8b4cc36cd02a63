use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::datapipe::Normalizer;
use crate::encoders::{EmbeddingTable, TextProvider};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NlsModel};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SNLSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const TABLE_BLOB: &str = "text.table";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TextMeta {
    HashTrainable,
    PrecomputedTable { provenance: String, sentences: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Trailer {
    model: ModelConfig,
    normalizer: Normalizer,
    text: TextMeta,
    #[serde(default)]
    train_config: Option<TrainConfig>,
}

/// A model plus the training configuration that produced it, if recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: NlsModel<f32>,
    pub train_config: Option<TrainConfig>,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Validation(format!("checkpoint: {}", message.into()))
}

fn write_blob(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes magic, version, named little-endian f32 blobs and a length-prefixed JSON trailer.
pub fn write_checkpoint(model: &NlsModel<f32>, train_config: Option<&TrainConfig>, mut w: impl Write) -> Result<()> {
    let mut blobs: Vec<(String, Tensor<f32>)> = model.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let text = match &model.text {
        TextProvider::Hash(_) => TextMeta::HashTrainable,
        TextProvider::Table(table) => {
            let sentences: Vec<String> = table.sentences().map(str::to_string).collect();
            let mut data = Vec::with_capacity(sentences.len() * table.dim());
            for s in &sentences {
                data.extend_from_slice(table.get(s)?);
            }
            blobs.push((TABLE_BLOB.into(), Tensor::new(&[sentences.len(), table.dim()], data)?));
            TextMeta::PrecomputedTable { provenance: table.provenance().to_string(), sentences }
        }
    };
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(blobs.len() as u32).to_le_bytes())?;
    for (name, t) in &blobs {
        write_blob(&mut w, name, t)?;
    }
    let trailer = Trailer { model: model.config.clone(), normalizer: model.normalizer.clone(), text, train_config: train_config.cloned() };
    let json = serde_json::to_vec(&trailer)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(bad(format!("truncated while reading {what}")));
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }
}

const MAX_DIMS: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    if r.bytes(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(bad("missing SNLSCKPT magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32("blob count")?;
    let mut blobs = Vec::with_capacity(count.min(1024) as usize);
    for i in 0..count {
        let name_len = r.u32("blob name length")?;
        if name_len > 4096 {
            return Err(bad(format!("blob {i} name length {name_len} is implausible")));
        }
        let name = String::from_utf8(r.bytes(name_len as usize, "blob name")?).map_err(|_| bad(format!("blob {i} name is not UTF-8")))?;
        let ndim = r.u32("blob rank")?;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(bad(format!("blob `{name}` has rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| r.u64("blob shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64)).filter(|&n| n <= MAX_ELEMENTS);
        let numel = numel.ok_or_else(|| bad(format!("blob `{name}` shape {shape:?} is too large")))? as usize;
        let raw = r.bytes(numel * 4, &format!("blob `{name}` data"))?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        blobs.push((name, Tensor::new(&shape, data)?));
    }
    let len = r.u64("trailer length")?;
    if len > 1 << 30 {
        return Err(bad("trailer length is implausible"));
    }
    let trailer: Trailer = serde_json::from_slice(&r.bytes(len as usize, "config trailer")?).map_err(|e| bad(format!("config trailer: {e}")))?;
    let mut extra = Vec::new();
    r.inner.read_to_end(&mut extra)?;
    if !extra.is_empty() {
        return Err(bad(format!("{} unexpected bytes after the trailer", extra.len())));
    }

    let mut model = match &trailer.text {
        TextMeta::HashTrainable => NlsModel::new_hash(trailer.model.clone(), 0),
        TextMeta::PrecomputedTable { provenance, sentences } => {
            let pos = blobs.iter().position(|(n, _)| n == TABLE_BLOB).ok_or_else(|| bad("table provider without table blob"))?;
            let (_, t) = blobs.remove(pos);
            if t.shape().len() != 2 || t.dim(0) != sentences.len() {
                return Err(bad(format!("table blob shape {:?} does not match {} sentences", t.shape(), sentences.len())));
            }
            let mut table = EmbeddingTable::new(t.dim(1), provenance.clone())?;
            for (i, s) in sentences.iter().enumerate() {
                table.insert(s, t.row(i).to_vec())?;
            }
            NlsModel::new(trailer.model.clone(), TextProvider::Table(table), 0)
        }
    };
    let expected: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let found: Vec<&str> = blobs.iter().map(|(n, _)| n.as_str()).collect();
    if expected != found {
        return Err(bad(format!("parameter names {found:?} do not match the model layout {expected:?}")));
    }
    let values: Vec<Tensor<f32>> = blobs.into_iter().map(|(_, t)| t).collect();
    model.set_params(&values).map_err(|e| bad(e.to_string()))?;
    model.normalizer = trailer.normalizer;
    Ok(Checkpoint { model, train_config: trailer.train_config })
}

pub fn save_checkpoint(model: &NlsModel<f32>, train_config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, train_config, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Io(e) => Error::Io(e),
        other => Error::Format { path: path.to_path_buf(), message: other.to_string() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { joint_dim: 8, head_hidden: 8, hash_buckets: 16, hash_dim: 6, simclr_hidden: 4, simclr_dim: 4, ..Default::default() }
    }

    #[test]
    fn hash_model_roundtrips_exactly() {
        let mut m = NlsModel::<f32>::new_hash(small(), 3);
        m.normalizer = Normalizer { mean: [0.1, -0.2, 9.81], std: [1.5, 0.3, 2.0], epsilon: Normalizer::EPSILON };
        let mut a = Vec::new();
        write_checkpoint(&m, Some(&TrainConfig::default()), &mut a).unwrap();
        let back = read_checkpoint(a.as_slice()).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.train_config, Some(TrainConfig::default()));
        let mut b = Vec::new();
        write_checkpoint(&back.model, back.train_config.as_ref(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_model_roundtrips() {
        let mut table = EmbeddingTable::new(3, "unit").unwrap();
        table.insert("a person walking", vec![1.0, 2.0, 3.0]).unwrap();
        table.insert("a person sitting", vec![-1.0, 0.5, 0.25]).unwrap();
        let m = NlsModel::<f32>::new(small(), TextProvider::Table(table), 9);
        let mut a = Vec::new();
        write_checkpoint(&m, None, &mut a).unwrap();
        assert_eq!(read_checkpoint(a.as_slice()).unwrap().model, m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = NlsModel::<f32>::new_hash(small(), 3);
        let mut a = Vec::new();
        write_checkpoint(&m, None, &mut a).unwrap();
        assert!(read_checkpoint(&a[..a.len() - 3]).is_err());
        let mut wrong = a.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        assert!(read_checkpoint(&a[..20]).is_err());
    }
}
