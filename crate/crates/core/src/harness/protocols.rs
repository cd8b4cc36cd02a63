use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{label_set, macro_f1, F1Report};
use super::report::{input_hash, EvalReport, RetrievalSummary, UnitResult};
use super::train::{check_user_disjoint, pretrain, TrainingCurves};
use crate::datapipe::{make_user_folds, Dataset, SensorWindow};
use crate::encoders::{EmbeddingTable, TextProvider};
use crate::error::{Error, Result};
use crate::inference::{build_class_embeddings, retrieve_topk, zeroshot_classify, GalleryIndex};
use crate::model::NlsModel;
use crate::prompts::{canonical_activity, EvalPolicy, PromptSet};
use crate::rng;

/// Text provider used when building fresh models.
#[derive(Debug, Clone, Copy)]
pub enum TextSource<'a> {
    Hash,
    Table(&'a EmbeddingTable),
}

impl TextSource<'_> {
    pub fn id(&self) -> String {
        match self {
            TextSource::Hash => "hash_trainable".into(),
            TextSource::Table(t) => format!("precomputed_table:{}", t.provenance()),
        }
    }
}

pub fn build_model(config: &TrainConfig, text: TextSource<'_>, seed: u64) -> NlsModel<f32> {
    match text {
        TextSource::Hash => NlsModel::new_hash(config.model.clone(), seed),
        TextSource::Table(t) => NlsModel::new(config.model.clone(), TextProvider::Table(t.clone()), seed),
    }
}

/// Worker threads for independent runs: `SNLS_THREADS` if set, else all cores.
pub fn thread_count() -> usize {
    std::env::var("SNLS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// Runs `n` independent jobs on a bounded pool; results keep job order.
pub fn run_parallel<T: Send>(n: usize, job: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count().min(n.max(1))).build().map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&job).collect())
}

/// Zero-shot macro-F1 of raw windows against `classes` under `policy`.
pub fn evaluate_windows(
    model: &NlsModel<f32>,
    windows: &[SensorWindow],
    prompts: &PromptSet,
    classes: &[String],
    config: &TrainConfig,
    policy: &EvalPolicy,
) -> Result<(F1Report, Vec<String>)> {
    let sentences = prompts.class_sentences(classes, policy)?;
    let set = build_class_embeddings(model, &sentences, config.aggregate, &format!("{policy:?}"))?;
    let emb = model.embed_windows(windows)?;
    let preds = zeroshot_classify(&emb, &set)?;
    let truths: Vec<String> = windows.iter().map(|w| w.label.clone()).collect();
    Ok((macro_f1(&preds, &truths, classes)?, preds))
}

/// Picks the template with the highest validation macro-F1 (first one on ties).
pub fn select_template(model: &NlsModel<f32>, val: &[SensorWindow], prompts: &PromptSet, classes: &[String], config: &TrainConfig) -> Result<(String, f64)> {
    let mut best: Option<(String, f64)> = None;
    for t in prompts.templates() {
        let (f1, _) = evaluate_windows(model, val, prompts, classes, config, &EvalPolicy::Template(t.id.clone()))?;
        if best.as_ref().is_none_or(|(_, b)| f1.macro_f1 > *b) {
            best = Some((t.id.clone(), f1.macro_f1));
        }
    }
    best.ok_or_else(|| Error::arg("prompt set has no templates"))
}

/// Splits windows by user: `ceil(fraction * users)` (at least one) go to validation.
pub fn split_by_users(windows: &[SensorWindow], fraction: f64, seed: u64) -> Result<(Vec<SensorWindow>, Vec<SensorWindow>)> {
    let mut users: Vec<String> = windows.iter().map(|w| w.user_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if users.len() < 2 {
        return Err(Error::arg("need at least two users to hold out validation users"));
    }
    users.shuffle(&mut rng::stream(seed, &[rng::tag("val-users")]));
    let n_val = ((users.len() as f64 * fraction).ceil() as usize).clamp(1, users.len() - 1);
    let val_users: BTreeSet<&String> = users[..n_val].iter().collect();
    let (val, train): (Vec<SensorWindow>, Vec<SensorWindow>) = windows.iter().cloned().partition(|w| val_users.contains(&w.user_id));
    Ok((train, val))
}

fn curve_details(curves: &TrainingCurves) -> IndexMap<String, serde_json::Value> {
    let mut d = IndexMap::new();
    d.insert("epochs_run".into(), serde_json::json!(curves.train_loss.len()));
    d.insert("best_epoch".into(), serde_json::json!(curves.best_epoch));
    d.insert("best_val_loss".into(), serde_json::json!(curves.best_val_loss));
    d.insert("final_train_loss".into(), serde_json::json!(curves.train_loss.last()));
    d
}

/// Train/validation/test windows of one protocol unit (a fold or an unseen group).
#[derive(Debug, Clone)]
pub struct ProtocolSplit {
    pub name: String,
    pub train: Vec<SensorWindow>,
    pub val: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    /// Classes scored on `test`.
    pub classes: Vec<String>,
    /// Classes used for template selection on `val`.
    pub val_classes: Vec<String>,
    pub seed: u64,
}

fn run_unit(
    unit: &ProtocolSplit,
    text: TextSource<'_>,
    prompts: &PromptSet,
    config: &TrainConfig,
    select_template_flag: bool,
) -> Result<(UnitResult, NlsModel<f32>)> {
    let mut model = build_model(config, text, unit.seed);
    let cfg = TrainConfig { seed: unit.seed, ..config.clone() };
    let curves = pretrain(&cfg, &unit.train, &unit.val, prompts, &mut model)?;
    let mut details = curve_details(&curves);
    let policy = if select_template_flag {
        let (id, val_f1) = select_template(&model, &unit.val, prompts, &unit.val_classes, config)?;
        details.insert("template_id".into(), serde_json::json!(id));
        details.insert("template_val_f1".into(), serde_json::json!(val_f1));
        EvalPolicy::Template(id)
    } else {
        config.eval_policy.clone()
    };
    let (f1, _) = evaluate_windows(&model, &unit.test, prompts, &unit.classes, config, &policy)?;
    details.insert("train_windows".into(), serde_json::json!(unit.train.len()));
    details.insert("test_windows".into(), serde_json::json!(unit.test.len()));
    Ok((UnitResult { name: unit.name.clone(), macro_f1: f1.macro_f1, per_class_f1: f1.per_class, absent_classes: f1.absent_classes, details }, model))
}

/// Options shared by the pre-training protocols.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProtocolOptions {
    /// Sweep template ids on validation data and evaluate with the best.
    pub select_template: bool,
}

/// Builds the user-disjoint fold splits and audits them for user leakage.
pub fn standard_splits(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<ProtocolSplit>> {
    let users = dataset.users();
    if users.len() < config.num_folds {
        return Err(Error::arg(format!("{} users cannot fill {} folds", users.len(), config.num_folds)));
    }
    let plan = make_user_folds(&users, config.num_folds, config.seed)?;
    plan.audit(&users)?;
    let classes = dataset.activities();
    let splits: Vec<ProtocolSplit> = plan
        .folds
        .iter()
        .enumerate()
        .map(|(i, f)| ProtocolSplit {
            name: format!("fold {i}"),
            train: dataset.for_users(&f.train_users).windows,
            val: dataset.for_users(&f.val_users).windows,
            test: dataset.for_users(&f.test_users).windows,
            classes: classes.clone(),
            val_classes: classes.clone(),
            seed: rng::derive(config.seed, &[rng::tag("fold"), i as u64]),
        })
        .collect();
    for u in &splits {
        check_user_disjoint(&u.train, &u.test, "train and test splits")?;
        check_user_disjoint(&u.val, &u.test, "validation and test splits")?;
    }
    Ok(splits)
}

/// User-disjoint k-fold protocol. Returns the report and the per-fold models.
pub fn run_standard_eval(
    dataset: &Dataset,
    prompts: &PromptSet,
    text: TextSource<'_>,
    config: &TrainConfig,
    options: ProtocolOptions,
) -> Result<(EvalReport, Vec<NlsModel<f32>>)> {
    config.validate()?;
    let units = standard_splits(dataset, config)?;
    let results = run_parallel(units.len(), |i| run_unit(&units[i], text, prompts, config, options.select_template))?;
    let hash = input_hash(config, &dataset.content_hash(), &["standard", &text.id(), &prompts_fingerprint(prompts)?])?;
    let (results, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut report = EvalReport::new("standard", config, hash, results);
    report.notes.push(format!("user audit passed for {} folds", units.len()));
    Ok((report, models))
}

fn prompts_fingerprint(prompts: &PromptSet) -> Result<String> {
    Ok(super::report::git_style_hash(serde_json::to_string(prompts)?.as_bytes()))
}

/// Disjoint groups of held-out activities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnseenGroupPlan {
    pub groups: Vec<Vec<String>>,
}

impl UnseenGroupPlan {
    /// Checks group sizes, pairwise disjointness and membership in `activities`.
    pub fn validate(&self, activities: &[String]) -> Result<()> {
        let known: BTreeSet<String> = activities.iter().map(|a| canonical_activity(a)).collect();
        let mut seen = BTreeSet::new();
        for (i, g) in self.groups.iter().enumerate() {
            if g.len() < 2 {
                return Err(Error::arg(format!("group {i} has fewer than two activities")));
            }
            for a in g {
                let key = canonical_activity(a);
                if !known.contains(&key) {
                    return Err(Error::arg(format!("group {i} activity `{a}` is not in the dataset")));
                }
                if !seen.insert(key) {
                    return Err(Error::arg(format!("activity `{a}` appears in more than one group")));
                }
            }
        }
        if self.groups.is_empty() {
            return Err(Error::arg("plan has no groups"));
        }
        Ok(())
    }

    /// Shuffles the activities and deals them round-robin into `k` groups.
    pub fn round_robin(activities: &[String], k: usize, seed: u64) -> Result<Self> {
        if k == 0 || activities.len() < 2 * k {
            return Err(Error::arg(format!("{} activities cannot fill {k} groups of two", activities.len())));
        }
        let mut acts = activities.to_vec();
        acts.sort();
        acts.shuffle(&mut rng::stream(seed, &[rng::tag("unseen-groups")]));
        let mut groups = vec![Vec::new(); k];
        for (i, a) in acts.into_iter().enumerate() {
            groups[i % k].push(a);
        }
        Ok(Self { groups })
    }
}

/// Holds out each group's activities and audits that none reach its training or
/// validation windows.
pub fn unseen_splits(dataset: &Dataset, plan: &UnseenGroupPlan, config: &TrainConfig) -> Result<Vec<ProtocolSplit>> {
    let activities = dataset.activities();
    plan.validate(&activities)?;
    let mut splits = Vec::new();
    for (g, group) in plan.groups.iter().enumerate() {
        let keys: BTreeSet<String> = group.iter().map(|a| canonical_activity(a)).collect();
        let in_group = |w: &SensorWindow| keys.contains(&canonical_activity(&w.label));
        let seen = dataset.filter(|w| !in_group(w));
        let test = dataset.filter(in_group);
        if seen.is_empty() {
            return Err(Error::arg(format!("group {g} leaves no seen activities to train on")));
        }
        let seed = rng::derive(config.seed, &[rng::tag("group"), g as u64]);
        let (train, val) = split_by_users(&seen.windows, 0.2, seed)?;
        if let Some(w) = train.iter().chain(&val).find(|w| in_group(w)) {
            return Err(Error::Validation(format!("group {g} activity `{}` leaked into training", w.label)));
        }
        let classes: Vec<String> = activities.iter().filter(|a| keys.contains(&canonical_activity(a))).cloned().collect();
        splits.push(ProtocolSplit { name: format!("group {g}"), train, val, test: test.windows, classes, val_classes: seen.activities(), seed });
    }
    Ok(splits)
}

/// Trains on all activities outside each group and classifies the group's windows
/// against the group's classes only.
pub fn run_unseen_eval(
    dataset: &Dataset,
    plan: &UnseenGroupPlan,
    prompts: &PromptSet,
    text: TextSource<'_>,
    config: &TrainConfig,
    options: ProtocolOptions,
) -> Result<EvalReport> {
    config.validate()?;
    let units = unseen_splits(dataset, plan, config)?;
    let results = run_parallel(units.len(), |i| run_unit(&units[i], text, prompts, config, options.select_template).map(|(u, _)| u))?;
    let plan_json = serde_json::to_string(plan)?;
    let hash = input_hash(config, &dataset.content_hash(), &["unseen", &plan_json, &text.id(), &prompts_fingerprint(prompts)?])?;
    let mut report = EvalReport::new("unseen", config, hash, results);
    report.notes.push(format!("class audit passed for {} groups", plan.groups.len()));
    if options.select_template {
        report.notes.push("templates selected on seen-class validation windows only".into());
    }
    Ok(report)
}

/// Gallery of the queries' own sensor embeddings.
pub fn self_gallery(model: &NlsModel<f32>, windows: &[SensorWindow]) -> Result<GalleryIndex> {
    let emb = model.embed_windows(windows)?;
    let mut g = GalleryIndex::new(emb.dim(1), "sensor embeddings");
    for (i, w) in windows.iter().enumerate() {
        g.push(format!("item{i:06}"), emb.row(i).to_vec(), w.label.clone())?;
    }
    Ok(g)
}

/// Gallery of text-side embeddings of each window's base sentence.
pub fn text_gallery(model: &NlsModel<f32>, windows: &[SensorWindow], prompts: &PromptSet) -> Result<GalleryIndex> {
    let sentences = windows.iter().map(|w| prompts.base_sentence(&w.label)).collect::<Result<Vec<_>>>()?;
    let emb = model.embed_sentences(&sentences)?;
    let mut g = GalleryIndex::new(emb.dim(1), "text embeddings");
    for (i, w) in windows.iter().enumerate() {
        g.push(format!("item{i:06}"), emb.row(i).to_vec(), w.label.clone())?;
    }
    Ok(g)
}

/// Recall@j for `j = 1..=k`: the share of queries whose top-j holds an item whose
/// metadata equals the query's label.
pub fn run_retrieval_eval(model: &NlsModel<f32>, gallery: &GalleryIndex, queries: &[SensorWindow], k: usize) -> Result<RetrievalSummary> {
    if queries.is_empty() {
        return Err(Error::arg("no retrieval queries"));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    let emb = model.embed_windows(queries)?;
    let mut hits = vec![0usize; k];
    for (i, q) in queries.iter().enumerate() {
        let v: Vec<f64> = emb.row(i).iter().map(|&x| f64::from(x)).collect();
        let top = retrieve_topk(&v, gallery, k)?;
        let meta: IndexMap<&str, &str> = gallery.items().iter().map(|it| (it.item_id.as_str(), it.metadata.as_str())).collect();
        if let Some(first) = top.iter().position(|(id, _)| meta[id.as_str()] == q.label) {
            for h in hits.iter_mut().skip(first) {
                *h += 1;
            }
        }
    }
    let recall_at = (1..=k).map(|j| (j.to_string(), hits[j - 1] as f64 / queries.len() as f64)).collect();
    Ok(RetrievalSummary { queries: queries.len(), gallery_size: gallery.len(), recall_at })
}

/// Convenience for reports that wrap one F1 evaluation.
pub fn unit_from_f1(name: &str, f1: F1Report) -> UnitResult {
    UnitResult { name: name.into(), macro_f1: f1.macro_f1, per_class_f1: f1.per_class, absent_classes: f1.absent_classes, details: IndexMap::new() }
}

pub fn classes_of(windows: &[SensorWindow]) -> Vec<String> {
    label_set(&windows.iter().map(|w| w.label.clone()).collect::<Vec<_>>())
}

/// One grid candidate and the best validation loss it reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: TrainConfig,
    pub best_val_loss: f64,
}

/// Pre-trains one model per candidate config and picks the lowest best-validation loss.
/// Earlier candidates win ties. Returns the winner's index and every point.
pub fn grid_search(
    candidates: &[TrainConfig],
    train: &[SensorWindow],
    val: &[SensorWindow],
    prompts: &PromptSet,
    text: TextSource<'_>,
) -> Result<(usize, Vec<GridPoint>)> {
    if candidates.is_empty() {
        return Err(Error::arg("grid search needs at least one candidate"));
    }
    let points = run_parallel(candidates.len(), |i| {
        let cfg = &candidates[i];
        let mut model = build_model(cfg, text, cfg.seed);
        let curves = pretrain(cfg, train, val, prompts, &mut model)?;
        Ok(GridPoint { config: cfg.clone(), best_val_loss: curves.best_val_loss.unwrap_or(f64::INFINITY) })
    })?;
    let best = (0..points.len()).fold(0, |b, i| if points[i].best_val_loss < points[b].best_val_loss { i } else { b });
    Ok((best, points))
}
