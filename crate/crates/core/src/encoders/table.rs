use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &str = "SNLS-EMB";
const VERSION: &str = "v1";

/// Table key: trimmed, internal whitespace collapsed to single spaces, case kept.
pub fn canonical_sentence(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Frozen sentence-to-vector store.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    provenance: String,
    entries: IndexMap<String, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableSummary {
    pub dim: usize,
    pub count: usize,
    pub provenance: String,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding table dimension must be positive"));
        }
        let provenance = canonical_sentence(&provenance.into());
        Ok(Self { dim, provenance: if provenance.is_empty() { "unknown".into() } else { provenance }, entries: IndexMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, sentence: &str, vector: Vec<f32>) -> Result<()> {
        let key = canonical_sentence(sentence);
        if key.is_empty() {
            return Err(Error::Validation("empty sentence key".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::Validation(format!("vector for {key:?} has length {}, expected {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("vector for {key:?} has non-finite values")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate sentence key {key:?}")));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn contains(&self, sentence: &str) -> bool {
        self.entries.contains_key(&canonical_sentence(sentence))
    }

    pub fn get(&self, sentence: &str) -> Result<&[f32]> {
        let key = canonical_sentence(sentence);
        self.entries.get(&key).map(Vec::as_slice).ok_or_else(|| Error::Lookup(format!("sentence {key:?} not in embedding table")))
    }

    pub fn summary(&self) -> TableSummary {
        TableSummary { dim: self.dim, count: self.len(), provenance: self.provenance.clone() }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{MAGIC} {VERSION} {} {} {}", self.dim, self.len(), self.provenance)?;
        for (s, v) in &self.entries {
            writeln!(w, "{s}")?;
            let line: Vec<String> = v.iter().map(f32::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Parses a table; errors carry the 1-based line number.
    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, message: String| Error::Parse { line, message };
        let (ln, header) = match lines.next() {
            Some((ln, l)) => (ln, l?),
            None => return Err(bad(1, "missing header".into())),
        };
        let parts: Vec<&str> = header.splitn(5, ' ').collect();
        if parts.len() < 4 || parts[0] != MAGIC || parts[1] != VERSION {
            return Err(bad(ln, format!("expected `{MAGIC} {VERSION} <dim> <count> <provenance>`")));
        }
        let dim: usize = parts[2].parse().map_err(|_| bad(ln, format!("bad dim {:?}", parts[2])))?;
        let count: usize = parts[3].parse().map_err(|_| bad(ln, format!("bad count {:?}", parts[3])))?;
        let mut table = EmbeddingTable::new(dim, parts.get(4).copied().unwrap_or("")).map_err(|e| bad(ln, e.to_string()))?;
        while let Some((sln, sentence)) = lines.next() {
            let sentence = sentence?;
            if sentence.is_empty() && table.len() == count {
                // Tolerate a trailing blank line.
                if lines.next().is_none() {
                    break;
                }
            }
            let Some((vln, vector)) = lines.next() else {
                return Err(bad(sln + 1, format!("missing vector line for {sentence:?}")));
            };
            let vector = vector?;
            let values = vector.split(' ').map(|t| t.parse::<f32>().map_err(|_| bad(vln, format!("bad float {t:?}")))).collect::<Result<Vec<f32>>>()?;
            if values.len() != dim {
                return Err(bad(vln, format!("vector for {sentence:?} has {} values, expected {dim}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(vln, format!("non-finite value in vector for {sentence:?}")));
            }
            if canonical_sentence(&sentence) != sentence {
                return Err(bad(sln, format!("sentence {sentence:?} is not in canonical form")));
            }
            table.insert(&sentence, values).map_err(|e| bad(sln, e.to_string()))?;
            if table.len() > count {
                return Err(bad(sln, format!("more entries than the header count {count}")));
            }
        }
        if table.len() != count {
            return Err(Error::Parse { line: 0, message: format!("count mismatch: header says {count}, found {}", table.len()) });
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)?;
        Self::read_from(f).map_err(|e| match e {
            Error::Parse { line, message } => Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") },
            other => other,
        })
    }
}

/// Loads a table file and reports its header fields, or the first failing line.
pub fn verify_table(path: impl AsRef<Path>) -> Result<TableSummary> {
    Ok(EmbeddingTable::load(path)?.summary())
}
