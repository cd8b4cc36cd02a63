//! Zero-shot classification, class-embedding aggregation, projection-head adaptation
//! and cross-modal retrieval.

mod adapt;
mod gallery;

pub use adapt::{
    adapt_on_features, adapt_projections, fewshot_sweep, frozen_features, score_features, stratified_indices, FewShotLevel, FewShotReport, FrozenFeatures,
};
pub use gallery::{retrieve_topk, GalleryIndex, GalleryItem};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Aggregate;
use crate::model::NlsModel;
use crate::numerics::{Scalar, Tensor};

const UNIT_TOL: f64 = 1e-5;

/// One L2-normalized row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbeddingSet {
    pub activities: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub provenance: String,
}

impl ClassEmbeddingSet {
    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.activities.len() != self.vectors.len() {
            return Err(Error::Validation("activity and vector counts differ".into()));
        }
        for (a, v) in self.activities.iter().zip(&self.vectors) {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_TOL || v.len() != self.dim() {
                return Err(Error::Validation(format!("class vector for `{a}` is not a unit vector of dim {}", self.dim())));
            }
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > crate::numerics::ops::NORM_EPS) {
        return Err(Error::NumericGuard { row: 0, message: format!("{what} has zero norm") });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Aggregates per-class sentence vectors. `Mean` averages the raw vectors and
/// L2-normalizes the result.
pub fn class_embeddings_from_vectors(
    per_class: IndexMap<String, Vec<Vec<f64>>>,
    aggregate: Aggregate,
    provenance: impl Into<String>,
) -> Result<ClassEmbeddingSet> {
    let mut activities = Vec::new();
    let mut vectors = Vec::new();
    for (activity, vs) in per_class {
        let first = vs.first().ok_or_else(|| Error::arg(format!("class `{activity}` has no sentences")))?;
        let v = match aggregate {
            Aggregate::Single => {
                if vs.len() != 1 {
                    return Err(Error::arg(format!("single aggregation needs one sentence for `{activity}`, got {}", vs.len())));
                }
                normalized(first, &activity)?
            }
            Aggregate::Mean => {
                let dim = first.len();
                let mut acc = vec![0.0; dim];
                for v in &vs {
                    if v.len() != dim {
                        return Err(Error::arg("sentence vectors differ in length"));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NumericGuard { row: 0, message: format!("non-finite sentence vector for `{activity}`") });
                    }
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += x;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= vs.len() as f64);
                normalized(&acc, &activity)?
            }
        };
        activities.push(activity);
        vectors.push(v);
    }
    if activities.is_empty() {
        return Err(Error::arg("no classes given"));
    }
    Ok(ClassEmbeddingSet { activities, vectors, provenance: provenance.into() })
}

/// Embeds every sentence through the text provider and text head, then aggregates.
pub fn build_class_embeddings<F: Scalar>(
    model: &NlsModel<F>,
    sentences: &IndexMap<String, Vec<String>>,
    aggregate: Aggregate,
    provenance: &str,
) -> Result<ClassEmbeddingSet> {
    let flat: Vec<String> = sentences.values().flatten().cloned().collect();
    if sentences.values().any(Vec::is_empty) || flat.is_empty() {
        return Err(Error::arg("every class needs at least one sentence"));
    }
    let emb = model.embed_sentences(&flat)?;
    let mut per_class = IndexMap::new();
    let mut row = 0;
    for (activity, list) in sentences {
        let vs = (0..list.len()).map(|k| emb.row(row + k).iter().map(|v| v.to_f64_lossy()).collect()).collect();
        row += list.len();
        per_class.insert(activity.clone(), vs);
    }
    class_embeddings_from_vectors(per_class, aggregate, format!("{provenance}; text={}", model.text.kind()))
}

/// Cosine score matrix `[N, C]` of window embeddings against the classes.
pub fn class_scores<F: Scalar>(window_embeddings: &Tensor<F>, classes: &ClassEmbeddingSet) -> Result<Vec<Vec<f64>>> {
    if window_embeddings.shape().len() != 2 || window_embeddings.dim(1) != classes.dim() {
        return Err(Error::arg(format!("window embeddings {:?} do not match class dimension {}", window_embeddings.shape(), classes.dim())));
    }
    (0..window_embeddings.dim(0))
        .map(|i| {
            let w: Vec<f64> = window_embeddings.row(i).iter().map(|v| v.to_f64_lossy()).collect();
            let n = norm(&w);
            if !(n > crate::numerics::ops::NORM_EPS) {
                return Err(Error::NumericGuard { row: i, message: "window embedding has zero norm".into() });
            }
            Ok(classes.vectors.iter().map(|c| c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / n).collect())
        })
        .collect()
}

/// Argmax class index per window; ties go to the lowest index.
pub fn zeroshot_predict<F: Scalar>(window_embeddings: &Tensor<F>, classes: &ClassEmbeddingSet) -> Result<Vec<usize>> {
    if classes.len() < 2 {
        return Err(Error::arg("classification needs at least two classes"));
    }
    Ok(class_scores(window_embeddings, classes)?
        .iter()
        .map(|row| row.iter().enumerate().fold(0, |best, (j, &s)| if s > row[best] { j } else { best }))
        .collect())
}

pub fn zeroshot_classify<F: Scalar>(window_embeddings: &Tensor<F>, classes: &ClassEmbeddingSet) -> Result<Vec<String>> {
    Ok(zeroshot_predict(window_embeddings, classes)?.into_iter().map(|i| classes.activities[i].clone()).collect())
}
