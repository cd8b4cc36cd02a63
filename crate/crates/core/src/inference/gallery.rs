use std::cmp::Ordering;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &str = "SNLS-GAL";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub item_id: String,
    pub vector: Vec<f32>,
    pub metadata: String,
}

/// Externally produced embeddings searched by cosine similarity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GalleryIndex {
    pub dim: usize,
    pub provenance: String,
    items: Vec<GalleryItem>,
}

impl GalleryIndex {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Self {
        Self { dim, provenance: provenance.into(), items: Vec::new() }
    }

    pub fn items(&self) -> &[GalleryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item_id: impl Into<String>, vector: Vec<f32>, metadata: impl Into<String>) -> Result<()> {
        let item_id = item_id.into();
        let metadata = metadata.into();
        if item_id.is_empty() || item_id.contains('\n') || metadata.contains('\n') {
            return Err(Error::Validation("item ids must be nonempty single lines; metadata a single line".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::Validation(format!("item `{item_id}` has dim {}, expected {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|v| !v.is_finite()) || vector.iter().all(|&v| v == 0.0) {
            return Err(Error::Validation(format!("item `{item_id}` has a non-finite or zero vector")));
        }
        if self.items.iter().any(|i| i.item_id == item_id) {
            return Err(Error::Validation(format!("duplicate item id `{item_id}`")));
        }
        self.items.push(GalleryItem { item_id, vector, metadata });
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let prov = if self.provenance.trim().is_empty() { "unknown" } else { self.provenance.trim() };
        writeln!(w, "{MAGIC} {VERSION} {} {} {prov}", self.dim, self.len())?;
        for it in &self.items {
            writeln!(w, "{}", it.item_id)?;
            writeln!(w, "{}", it.vector.iter().map(f32::to_string).collect::<Vec<_>>().join(" "))?;
            writeln!(w, "{}", it.metadata)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let lines: Vec<String> = BufReader::new(r).lines().collect::<std::io::Result<_>>()?;
        let bad = |line: usize, message: String| Error::Parse { line, message };
        let header = lines.first().ok_or_else(|| bad(1, "missing header".into()))?;
        let parts: Vec<&str> = header.splitn(5, ' ').collect();
        if parts.len() < 4 || parts[0] != MAGIC || parts[1] != VERSION {
            return Err(bad(1, format!("expected `{MAGIC} {VERSION} <dim> <count> <provenance>`")));
        }
        let dim: usize = parts[2].parse().map_err(|_| bad(1, "bad dim".into()))?;
        let count: usize = parts[3].parse().map_err(|_| bad(1, "bad count".into()))?;
        let body = &lines[1..];
        let body = if body.len() == 3 * count + 1 && body[3 * count].is_empty() { &body[..3 * count] } else { body };
        if body.len() != 3 * count {
            return Err(bad(0, format!("count mismatch: header says {count} items, body has {} lines", body.len())));
        }
        let mut g = GalleryIndex::new(dim, parts.get(4).copied().unwrap_or(""));
        for (k, chunk) in body.chunks(3).enumerate() {
            let line = 2 + 3 * k;
            let vector = chunk[1].split(' ').map(|t| t.parse::<f32>().map_err(|_| bad(line + 1, format!("bad float {t:?}")))).collect::<Result<Vec<f32>>>()?;
            g.push(chunk[0].clone(), vector, chunk[2].clone()).map_err(|e| bad(line, e.to_string()))?;
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(std::fs::File::open(path)?).map_err(|e| match e {
            Error::Parse { line, message } => Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") },
            other => other,
        })
    }
}

/// Top `min(k, |gallery|)` items by cosine similarity, descending; equal scores are
/// ordered by item id.
pub fn retrieve_topk(query: &[f64], gallery: &GalleryIndex, k: usize) -> Result<Vec<(String, f64)>> {
    if gallery.is_empty() {
        return Err(Error::arg("gallery is empty"));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if query.len() != gallery.dim {
        return Err(Error::arg(format!("query dim {} does not match gallery dim {}", query.len(), gallery.dim)));
    }
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(qn > crate::numerics::ops::NORM_EPS) {
        return Err(Error::NumericGuard { row: 0, message: "query has zero norm".into() });
    }
    let mut scored: Vec<(&str, f64)> = gallery
        .items
        .iter()
        .map(|it| {
            let (dot, nn) = it.vector.iter().zip(query).fold((0.0, 0.0), |(d, n), (&g, &q)| {
                let g = f64::from(g);
                (d + g * q, n + g * g)
            });
            (it.item_id.as_str(), dot / (qn * nn.sqrt()))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery() -> GalleryIndex {
        let mut g = GalleryIndex::new(2, "video model");
        g.push("b", vec![1.0, 0.0], "walking").unwrap();
        g.push("a", vec![2.0, 0.0], "running").unwrap();
        g.push("c", vec![0.0, 1.0], "sitting").unwrap();
        g
    }

    #[test]
    fn ties_break_by_id() {
        let r = retrieve_topk(&[1.0, 0.0], &gallery(), 5).unwrap();
        let ids: Vec<&str> = r.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert!((r[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(retrieve_topk(&[1.0, 0.0], &gallery(), 1).unwrap().len(), 1);
    }

    #[test]
    fn errors() {
        assert!(retrieve_topk(&[1.0], &gallery(), 1).is_err());
        assert!(retrieve_topk(&[1.0, 0.0], &GalleryIndex::new(2, ""), 1).is_err());
        assert!(retrieve_topk(&[1.0, 0.0], &gallery(), 0).is_err());
        let mut g = gallery();
        assert!(g.push("a", vec![1.0, 1.0], "").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let g = gallery();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("SNLS-GAL v1 2 3 video model\nb\n1 0\nwalking\n"));
        assert_eq!(GalleryIndex::read_from(&buf[..]).unwrap(), g);
        let cut = &buf[..buf.len() - 8];
        assert!(GalleryIndex::read_from(cut).is_err());
    }
}
