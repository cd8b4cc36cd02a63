use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: IndexMap<String, f64>,
    /// Classes with neither true nor predicted instances (scored as 0).
    pub absent_classes: Vec<String>,
}

/// Unweighted mean of per-class F1 over `classes`.
pub fn macro_f1(predictions: &[String], truths: &[String], classes: &[String]) -> Result<F1Report> {
    if classes.is_empty() {
        return Err(Error::arg("class set is empty"));
    }
    if truths.is_empty() || predictions.len() != truths.len() {
        return Err(Error::arg(format!("need equal, nonzero numbers of predictions and truths (got {} and {})", predictions.len(), truths.len())));
    }
    let mut index: IndexMap<&str, usize> = IndexMap::new();
    for c in classes {
        let n = index.len();
        if index.insert(c.as_str(), n).is_some() {
            return Err(Error::arg(format!("class `{c}` listed twice")));
        }
    }
    let k = classes.len();
    let (mut tp, mut fp, mut fneg) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    for (p, t) in predictions.iter().zip(truths) {
        let ti = *index.get(t.as_str()).ok_or_else(|| Error::arg(format!("truth label `{t}` not in class set")))?;
        match index.get(p.as_str()) {
            Some(&pi) if pi == ti => tp[ti] += 1,
            Some(&pi) => {
                fp[pi] += 1;
                fneg[ti] += 1;
            }
            None => fneg[ti] += 1,
        }
    }
    let mut per_class = IndexMap::new();
    let mut absent = Vec::new();
    for (i, c) in classes.iter().enumerate() {
        if tp[i] + fp[i] + fneg[i] == 0 {
            absent.push(c.clone());
        }
        let p = if tp[i] + fp[i] > 0 { tp[i] as f64 / (tp[i] + fp[i]) as f64 } else { 0.0 };
        let r = if tp[i] + fneg[i] > 0 { tp[i] as f64 / (tp[i] + fneg[i]) as f64 } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        per_class.insert(c.clone(), f);
    }
    let macro_f1 = per_class.values().sum::<f64>() / k as f64;
    Ok(F1Report { macro_f1, per_class, absent_classes: absent })
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sorted distinct labels.
pub fn label_set(labels: &[String]) -> Vec<String> {
    labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}
