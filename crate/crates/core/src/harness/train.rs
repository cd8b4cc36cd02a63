use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Batching, TrainConfig};
use crate::datapipe::{apply_normalizer, fit_normalizer, SensorWindow};
use crate::error::{Error, Result};
use crate::model::{NlsModel, ParamScope};
use crate::numerics::{adam_step, AdamState};
use crate::prompts::{PromptSet, SamplingPolicy};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

/// Tracks the best validation loss and signals when patience runs out.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub(crate) fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    /// Returns true if `loss` is a new best.
    pub(crate) fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        let improved = loss.is_finite() && self.best.is_none_or(|(_, b)| loss < b);
        if improved {
            self.best = Some((epoch, loss));
        }
        improved
    }

    pub(crate) fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(b, _)| epoch - b >= self.patience)
    }

    pub(crate) fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Index batches over `labels`. Batches smaller than two are dropped.
pub(crate) fn make_batches(labels: &[String], batch_size: usize, batching: Batching, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = match batching {
        Batching::Shuffle => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(rng);
            idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
        }
        Batching::DistinctLabels => {
            let mut groups: IndexMap<&str, Vec<usize>> = IndexMap::new();
            for (i, l) in labels.iter().enumerate() {
                groups.entry(l.as_str()).or_default().push(i);
            }
            groups.sort_keys();
            let mut queues: Vec<Vec<usize>> = groups.into_values().collect();
            for q in &mut queues {
                q.shuffle(rng);
            }
            let mut out = Vec::new();
            loop {
                let mut order: Vec<usize> = (0..queues.len()).filter(|&q| !queues[q].is_empty()).collect();
                if order.len() < 2 {
                    break;
                }
                order.shuffle(rng);
                order.truncate(batch_size.max(1));
                out.push(order.iter().map(|&q| queues[q].pop().unwrap()).collect());
            }
            out
        }
    };
    batches.retain(|b| b.len() >= 2);
    batches
}

fn sentence_seed(seed: u64, epoch: u64, i: usize) -> u64 {
    rng::derive(seed, &[rng::tag("sentence"), epoch, i as u64])
}

/// Sentences for `windows` drawn under `policy`; `epoch` selects the draw.
pub(crate) fn sentences_for(prompts: &PromptSet, labels: &[String], idx: &[usize], policy: SamplingPolicy, seed: u64, epoch: u64) -> Result<Vec<String>> {
    idx.iter().map(|&i| prompts.sample_training_sentence(&labels[i], policy, sentence_seed(seed, epoch, i))).collect()
}

/// Mean batch loss over `windows` (already normalized) in inference mode.
pub fn dataset_loss(model: &mut NlsModel<f32>, windows: &[SensorWindow], prompts: &PromptSet, config: &TrainConfig) -> Result<f64> {
    let labels: Vec<String> = windows.iter().map(|w| w.label.clone()).collect();
    let batches = make_batches(&labels, config.batch_size, config.batching, &mut rng::stream(config.seed, &[rng::tag("val-batches")]));
    if batches.is_empty() {
        return Err(Error::arg("validation split too small to form a batch"));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (b, idx) in batches.iter().enumerate() {
        let ws: Vec<SensorWindow> = idx.iter().map(|&i| windows[i].clone()).collect();
        let sentences = sentences_for(prompts, &labels, idx, config.sampling, rng::derive(config.seed, &[rng::tag("val")]), 0)?;
        let l = model.batch_loss(&ws, &sentences, config.objective, false, false, rng::derive(config.seed, &[rng::tag("val-step"), b as u64]))?;
        total += l.total * idx.len() as f64;
        count += idx.len();
    }
    Ok(total / count as f64)
}

pub(crate) fn check_user_disjoint(a: &[SensorWindow], b: &[SensorWindow], what: &str) -> Result<()> {
    let ua: BTreeSet<&str> = a.iter().map(|w| w.user_id.as_str()).collect();
    if let Some(u) = b.iter().map(|w| w.user_id.as_str()).find(|u| ua.contains(u)) {
        return Err(Error::Validation(format!("user `{u}` appears in both {what}")));
    }
    Ok(())
}

/// Pre-trains `model` on raw windows. The normalizer is fitted on `train` and stored
/// in the model; on return the model holds the best-validation parameters.
pub fn pretrain(config: &TrainConfig, train: &[SensorWindow], val: &[SensorWindow], prompts: &PromptSet, model: &mut NlsModel<f32>) -> Result<TrainingCurves> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::arg("pre-training needs nonempty train and validation splits"));
    }
    check_user_disjoint(train, val, "train and validation splits")?;
    model.normalizer = fit_normalizer(train)?;
    let train = apply_normalizer(&model.normalizer, train);
    let val = apply_normalizer(&model.normalizer, val);
    let labels: Vec<String> = train.iter().map(|w| w.label.clone()).collect();
    let mut adam = AdamState::new(config.lr, config.weight_decay);
    let mut stop = EarlyStopping::new(config.patience);
    let mut curves = TrainingCurves::default();
    let mut best = model.clone();
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let batches = make_batches(&labels, config.batch_size, config.batching, &mut rng::stream(config.seed, &[rng::tag("epoch"), e]));
        if batches.is_empty() {
            return Err(Error::arg("training split too small to form a batch"));
        }
        let (mut total, mut count) = (0.0, 0usize);
        for (b, idx) in batches.iter().enumerate() {
            let ws: Vec<SensorWindow> = idx.iter().map(|&i| train[i].clone()).collect();
            let sentences = sentences_for(prompts, &labels, idx, config.sampling, config.seed, e)?;
            model.zero_grad();
            let step_seed = rng::derive(config.seed, &[rng::tag("step"), e, b as u64]);
            let l = model.batch_loss(&ws, &sentences, config.objective, true, true, step_seed)?;
            if !l.total.is_finite() {
                return Err(Error::NumericGuard { row: b, message: format!("non-finite training loss in epoch {epoch}") });
            }
            adam_step(&mut model.params_mut(ParamScope::Full, config.objective), &mut adam)?;
            model.after_step();
            total += l.total * idx.len() as f64;
            count += idx.len();
        }
        curves.train_loss.push(total / count as f64);
        let v = dataset_loss(model, &val, prompts, config)?;
        curves.val_loss.push(v);
        log::debug!("epoch {epoch}: train {:.4} val {v:.4}", total / count as f64);
        if stop.observe(epoch, v) {
            best = model.clone();
        }
        if stop.should_stop(epoch) {
            curves.stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    if let Some((b, l)) = stop.best() {
        curves.best_epoch = Some(b);
        curves.best_val_loss = Some(l);
        *model = best;
    }
    model.clear_grads();
    Ok(curves)
}
