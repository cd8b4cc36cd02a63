use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{build_class_embeddings, zeroshot_classify};
use crate::datapipe::SensorWindow;
use crate::encoders::gather_rows;
use crate::error::{Error, Result};
use crate::harness::{label_set, macro_f1, make_batches, mean_std, sentences_for, EarlyStopping, F1Report, TrainConfig, TrainingCurves};
use crate::model::{dedup, NlsModel, ParamScope};
use crate::numerics::{adam_step, AdamState, Tensor};
use crate::objectives::Objective;
use crate::prompts::PromptSet;
use crate::rng;

/// Frozen-encoder features of target windows, computed once and reused.
#[derive(Debug, Clone)]
pub struct FrozenFeatures {
    pub feats: Tensor<f32>,
    pub labels: Vec<String>,
}

impl FrozenFeatures {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> FrozenFeatures {
        FrozenFeatures { feats: gather_rows(&self.feats, idx), labels: idx.iter().map(|&i| self.labels[i].clone()).collect() }
    }
}

/// Normalizes raw windows with the model's stored statistics and encodes them with
/// the sensor encoder in inference mode.
pub fn frozen_features(model: &NlsModel<f32>, raw: &[SensorWindow]) -> Result<FrozenFeatures> {
    let normalized: Vec<SensorWindow> = raw.iter().map(|w| model.normalizer.apply_window(w)).collect();
    Ok(FrozenFeatures { feats: model.sensor_features(&normalized)?, labels: raw.iter().map(|w| w.label.clone()).collect() })
}

/// Frozen text-provider outputs keyed by sentence.
#[derive(Default)]
struct TextCache {
    rows: IndexMap<String, Vec<f32>>,
}

impl TextCache {
    fn batch(&mut self, model: &NlsModel<f32>, unique: &[String]) -> Result<Tensor<f32>> {
        let missing: Vec<String> = unique.iter().filter(|s| !self.rows.contains_key(*s)).cloned().collect();
        if !missing.is_empty() {
            let t = model.text_features(&missing)?;
            for (i, s) in missing.into_iter().enumerate() {
                self.rows.insert(s, t.row(i).to_vec());
            }
        }
        let dim = model.text.output_dim();
        let mut data = Vec::with_capacity(unique.len() * dim);
        for s in unique {
            data.extend_from_slice(&self.rows[s]);
        }
        Tensor::new(&[unique.len(), dim], data)
    }
}

struct HeadsSnapshot {
    sensor: crate::encoders::ProjectionHead<f32>,
    text: crate::encoders::ProjectionHead<f32>,
    temperature: crate::objectives::TemperatureParam<f32>,
}

#[allow(clippy::too_many_arguments)]
fn feature_loss(
    model: &mut NlsModel<f32>,
    cache: &mut TextCache,
    data: &FrozenFeatures,
    prompts: &PromptSet,
    config: &TrainConfig,
    backward: bool,
    batches: &[Vec<usize>],
    sentence_seed: u64,
    epoch: u64,
    mut after_batch: impl FnMut(&mut NlsModel<f32>) -> Result<()>,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for idx in batches {
        let sentences = sentences_for(prompts, &data.labels, idx, config.sampling, sentence_seed, epoch)?;
        let (unique, tidx) = dedup(&sentences);
        let text = cache.batch(model, &unique)?;
        let feats = gather_rows(&data.feats, idx);
        let labels: Vec<String> = idx.iter().map(|&i| data.labels[i].clone()).collect();
        if backward {
            model.zero_grad();
        }
        let (loss, _) = model.heads_loss(&feats, &text, &tidx, &labels, Objective::Clip, backward)?;
        if !loss.is_finite() {
            return Err(Error::NumericGuard { row: 0, message: "non-finite adaptation loss".into() });
        }
        if backward {
            after_batch(model)?;
        }
        total += f64::from(loss) * idx.len() as f64;
        count += idx.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Trains only the projection heads and temperature on frozen target features with
/// the symmetric contrastive loss. Keeps the best-validation heads.
pub fn adapt_on_features(
    model: &mut NlsModel<f32>,
    train: &FrozenFeatures,
    val: &FrozenFeatures,
    prompts: &PromptSet,
    config: &TrainConfig,
) -> Result<TrainingCurves> {
    config.validate()?;
    if label_set(&train.labels).len() < 2 {
        return Err(Error::arg("adaptation needs labeled windows from at least two classes"));
    }
    if val.is_empty() {
        return Err(Error::arg("adaptation needs validation windows"));
    }
    let mut curves = TrainingCurves::default();
    if config.epochs == 0 {
        return Ok(curves);
    }
    let bs = config.batch_size.min(train.len());
    let val_cfg = TrainConfig { batch_size: config.batch_size.min(val.len()).max(2), ..config.clone() };
    let val_batches = make_batches(&val.labels, val_cfg.batch_size, config.batching, &mut rng::stream(config.seed, &[rng::tag("adapt-val")]));
    if val_batches.is_empty() {
        return Err(Error::arg("validation data too small to form a batch"));
    }
    let val_seed = rng::derive(config.seed, &[rng::tag("adapt-val-sentences")]);
    let mut cache = TextCache::default();
    let mut adam = AdamState::new(config.lr, config.weight_decay);
    let mut stop = EarlyStopping::new(config.patience);
    let mut best: Option<HeadsSnapshot> = None;
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let batches = make_batches(&train.labels, bs, config.batching, &mut rng::stream(config.seed, &[rng::tag("adapt-epoch"), e]));
        if batches.is_empty() {
            return Err(Error::arg("training data too small to form a batch"));
        }
        let step = |m: &mut NlsModel<f32>| -> Result<()> {
            adam_step(&mut m.params_mut(ParamScope::Heads, Objective::Clip), &mut adam)?;
            m.after_step();
            Ok(())
        };
        let t = feature_loss(model, &mut cache, train, prompts, config, true, &batches, config.seed, e, step)?;
        let v = feature_loss(model, &mut cache, val, prompts, &val_cfg, false, &val_batches, val_seed, 0, |_| Ok(()))?;
        curves.train_loss.push(t);
        curves.val_loss.push(v);
        if stop.observe(epoch, v) {
            best = Some(HeadsSnapshot { sensor: model.sensor_head.clone(), text: model.text_head.clone(), temperature: model.temperature.clone() });
        }
        if stop.should_stop(epoch) {
            curves.stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    if let (Some((b, l)), Some(snap)) = (stop.best(), best) {
        curves.best_epoch = Some(b);
        curves.best_val_loss = Some(l);
        model.sensor_head = snap.sensor;
        model.text_head = snap.text;
        model.temperature = snap.temperature;
    }
    model.clear_grads();
    Ok(curves)
}

/// [`adapt_on_features`] from raw target windows.
pub fn adapt_projections(
    model: &mut NlsModel<f32>,
    train: &[SensorWindow],
    val: &[SensorWindow],
    prompts: &PromptSet,
    config: &TrainConfig,
) -> Result<TrainingCurves> {
    let tf = frozen_features(model, train)?;
    let vf = frozen_features(model, val)?;
    adapt_on_features(model, &tf, &vf, prompts, config)
}

/// Zero-shot macro-F1 of cached features against `classes`.
pub fn score_features(model: &NlsModel<f32>, data: &FrozenFeatures, prompts: &PromptSet, classes: &[String], config: &TrainConfig) -> Result<F1Report> {
    let sentences = prompts.class_sentences(classes, &config.eval_policy)?;
    let set = build_class_embeddings(model, &sentences, config.aggregate, "target classes")?;
    let emb = model.sensor_head.forward(&data.feats)?.0;
    let preds = zeroshot_classify(&emb, &set)?;
    macro_f1(&preds, &data.labels, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotLevel {
    pub shots: usize,
    pub scores: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub skipped: bool,
    pub warning: Option<String>,
    /// `target_val` when a validation subsample at this budget existed, else `shots`.
    pub validation_source: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub zero_shot: f64,
    pub levels: Vec<FewShotLevel>,
}

pub fn stratified_indices(labels: &[String], per_class: usize, rng: &mut impl rand::Rng) -> Option<Vec<usize>> {
    let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by.entry(l.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by.values() {
        if idx.len() < per_class {
            return None;
        }
        out.extend(rand::seq::index::sample(rng, idx.len(), per_class).into_iter().map(|k| idx[k]));
    }
    Some(out)
}

/// Adapts copies of `model` on `shots` windows per class, `runs` times per level, and
/// scores each on the untouched test split.
#[allow(clippy::too_many_arguments)]
pub fn fewshot_sweep(
    model: &NlsModel<f32>,
    train: &[SensorWindow],
    val: &[SensorWindow],
    test: &[SensorWindow],
    prompts: &PromptSet,
    config: &TrainConfig,
    shots: &[usize],
    runs: usize,
    seed: u64,
) -> Result<FewShotReport> {
    if runs == 0 || shots.is_empty() {
        return Err(Error::arg("need at least one run and one shot level"));
    }
    let train_f = frozen_features(model, train)?;
    let val_f = frozen_features(model, val)?;
    let test_f = frozen_features(model, test)?;
    let classes = label_set(&[train_f.labels.clone(), test_f.labels.clone()].concat());
    let train_classes: BTreeSet<&String> = train_f.labels.iter().collect();
    let zero_shot = score_features(model, &test_f, prompts, &classes, config)?.macro_f1;
    let mut levels = Vec::new();
    for &k in shots {
        let mut level = FewShotLevel { shots: k, scores: Vec::new(), mean: None, std: None, skipped: false, warning: None, validation_source: Vec::new() };
        let counts: BTreeMap<&String, usize> = train_f.labels.iter().fold(BTreeMap::new(), |mut m, l| {
            *m.entry(l).or_default() += 1;
            m
        });
        if k == 0 || classes.iter().any(|c| !train_classes.contains(c) || counts[c] < k) {
            level.skipped = true;
            level.warning = Some(format!("some class has fewer than {k} training windows"));
            log::warn!("skipping {k}-shot level: some class has fewer than {k} training windows");
            levels.push(level);
            continue;
        }
        for run in 0..runs {
            let mut r = rng::stream(seed, &[rng::tag("fewshot"), k as u64, run as u64]);
            let pick = stratified_indices(&train_f.labels, k, &mut r).expect("counts checked");
            let shots_f = train_f.subset(&pick);
            let (val_sub, source) = match stratified_indices(&val_f.labels, k, &mut r) {
                Some(v) if label_set(&val_f.labels) == classes => (val_f.subset(&v), "target_val"),
                _ => (shots_f.clone(), "shots"),
            };
            let mut m = model.clone();
            let cfg = TrainConfig { seed: rng::derive(seed, &[k as u64, run as u64]), ..config.clone() };
            adapt_on_features(&mut m, &shots_f, &val_sub, prompts, &cfg)?;
            level.scores.push(score_features(&m, &test_f, prompts, &classes, config)?.macro_f1);
            level.validation_source.push(source.to_string());
        }
        let (mean, std) = mean_std(&level.scores);
        level.mean = Some(mean);
        level.std = Some(std);
        levels.push(level);
    }
    Ok(FewShotReport { zero_shot, levels })
}
