use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::metrics::mean_std;
use crate::error::Result;
use crate::inference::FewShotReport;

pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 over a git-blob style header (`blob <len>\0`) followed by the bytes.
pub fn git_style_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    super::hex(&h.finalize())
}

/// Digest of everything that determines a run: config, data fingerprint, extras.
pub fn input_hash(config: &TrainConfig, data_hash: &str, extra: &[&str]) -> Result<String> {
    let mut text = serde_json::to_string(config)?;
    text.push('\n');
    text.push_str(data_hash);
    for e in extra {
        text.push('\n');
        text.push_str(e);
    }
    Ok(git_style_hash(text.as_bytes()))
}

/// Result of one fold, group or run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub name: String,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub per_class_f1: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub details: IndexMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub queries: usize,
    pub gallery_size: usize,
    /// `k -> recall@k`.
    pub recall_at: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kind: String,
    pub input_hash: String,
    pub config: TrainConfig,
    pub units: Vec<UnitResult>,
    pub mean_macro_f1: Option<f64>,
    pub std_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewShotReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(kind: &str, config: &TrainConfig, input_hash: String, units: Vec<UnitResult>) -> Self {
        let scores: Vec<f64> = units.iter().map(|u| u.macro_f1).collect();
        let (mean, std) = if scores.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&scores);
            (Some(m), Some(s))
        };
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            input_hash,
            config: config.clone(),
            units,
            mean_macro_f1: mean,
            std_macro_f1: std,
            retrieval: None,
            fewshot: None,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Digest of the serialized report.
    pub fn content_hash(&self) -> Result<String> {
        Ok(git_style_hash(self.to_json()?.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_blob_hash_of_empty_input() {
        // `git hash-object --stdin -w` with SHA-256 object format on empty input.
        assert_eq!(git_style_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }

    #[test]
    fn mean_matches_units() {
        let u = |f| UnitResult { name: "x".into(), macro_f1: f, per_class_f1: IndexMap::new(), absent_classes: vec![], details: IndexMap::new() };
        let r = EvalReport::new("standard", &TrainConfig::default(), "h".into(), vec![u(0.5), u(0.7), u(0.9)]);
        assert!((r.mean_macro_f1.unwrap() - 0.7).abs() < 1e-9);
        assert_eq!(r.content_hash().unwrap(), r.clone().content_hash().unwrap());
    }
}
