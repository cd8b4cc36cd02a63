//! Activity sentences: templates, external-knowledge suffixes, diversified-sentence
//! corpora, and the sampling policies used during training and evaluation.

use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const PLACEHOLDER: &str = "{activity_name}";
pub const BASE_TEMPLATE_ID: &str = "handcrafted_06";

const SHIPPED_TEMPLATES: &str = include_str!("../../data/templates.json");
const MOBIACT_KNOWLEDGE: &str = include_str!("../../data/mobiact_knowledge.json");
const UNSEEN_GROUPS: &str = include_str!("../../data/unseen_groups.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub pattern: String,
}

impl Template {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let t = Self { id: id.into(), pattern: pattern.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pattern.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::Validation(format!("template `{}` has {n} `{PLACEHOLDER}` placeholders, expected exactly one", self.id)));
        }
        Ok(())
    }

    pub fn render(&self, activity: &str) -> Result<String> {
        render(self, activity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub activity: String,
    pub body_parts: String,
    pub movements: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeMode {
    BodyParts,
    Movements,
    Both,
}

/// How a training sentence is chosen for a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    #[default]
    BaseOnly,
    RandomTemplate,
    RandomCorpus,
}

/// Which sentences represent a class at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    #[default]
    Base,
    Template(String),
    AllTemplates,
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical activity key: trimmed, lowercased, single-spaced.
pub fn canonical_activity(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

/// Label cleanup for free-text annotation vocabularies: drops semicolons and colons
/// and normalizes whitespace.
pub fn clean_label(s: &str) -> String {
    collapse_whitespace(&s.replace([';', ':'], " "))
}

pub fn render(template: &Template, activity: &str) -> Result<String> {
    if activity.trim().is_empty() {
        return Err(Error::arg("activity name is empty"));
    }
    template.validate()?;
    Ok(collapse_whitespace(&template.pattern.replace(PLACEHOLDER, activity)))
}

/// Appends knowledge text as `sentence + ". " + text`. A trailing period on the
/// sentence is not doubled.
pub fn attach_knowledge(sentence: &str, entry: &KnowledgeEntry, mode: KnowledgeMode) -> Result<String> {
    let pick = |field: &str, name: &str| -> Result<String> {
        let v = field.trim();
        if v.is_empty() {
            return Err(Error::arg(format!("knowledge for `{}` has no {name}", entry.activity)));
        }
        Ok(v.to_string())
    };
    let suffix = match mode {
        KnowledgeMode::BodyParts => pick(&entry.body_parts, "body_parts")?,
        KnowledgeMode::Movements => pick(&entry.movements, "movements")?,
        KnowledgeMode::Both => {
            format!("{} {}", pick(&entry.body_parts, "body_parts")?, pick(&entry.movements, "movements")?)
        }
    };
    let stem = sentence.trim_end();
    let stem = stem.strip_suffix('.').unwrap_or(stem);
    Ok(format!("{stem}. {suffix}"))
}

/// Templates plus optional knowledge and diversified-sentence corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    templates: Vec<Template>,
    knowledge: Option<IndexMap<String, KnowledgeEntry>>,
    knowledge_mode: Option<KnowledgeMode>,
    corpus: Option<IndexMap<String, Vec<String>>>,
}

impl PromptSet {
    pub fn new(templates: Vec<Template>) -> Result<Self> {
        let mut ids = std::collections::BTreeSet::new();
        for t in &templates {
            t.validate()?;
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Validation(format!("duplicate template id `{}`", t.id)));
            }
        }
        if !ids.contains(BASE_TEMPLATE_ID) {
            return Err(Error::Validation(format!("template set lacks the base template `{BASE_TEMPLATE_ID}`")));
        }
        Ok(Self { templates, knowledge: None, knowledge_mode: None, corpus: None })
    }

    /// The 33 bundled templates.
    pub fn shipped() -> Self {
        let templates: Vec<Template> = serde_json::from_str(SHIPPED_TEMPLATES).expect("bundled templates parse");
        Self::new(templates).expect("bundled templates are valid")
    }

    pub fn load_templates(path: impl AsRef<Path>) -> Result<Self> {
        let templates: Vec<Template> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(templates)
    }

    /// Knowledge entries attached to every rendered sentence in `mode`.
    pub fn with_knowledge(mut self, entries: Vec<KnowledgeEntry>, mode: KnowledgeMode) -> Result<Self> {
        let mut map = IndexMap::new();
        for e in entries {
            let key = canonical_activity(&e.activity);
            if map.insert(key.clone(), e).is_some() {
                return Err(Error::Validation(format!("duplicate knowledge entry for `{key}`")));
            }
        }
        self.knowledge = Some(map);
        self.knowledge_mode = Some(mode);
        Ok(self)
    }

    pub fn with_corpus(mut self, corpus: IndexMap<String, Vec<String>>) -> Result<Self> {
        let mut map = IndexMap::new();
        for (activity, variants) in corpus {
            if variants.is_empty() || variants.iter().any(|v| v.trim().is_empty()) {
                return Err(Error::Validation(format!("corpus for `{activity}` has an empty variant list or entry")));
            }
            let key = canonical_activity(&activity);
            if map.insert(key.clone(), variants).is_some() {
                return Err(Error::Validation(format!("duplicate corpus entry for `{key}`")));
            }
        }
        self.corpus = Some(map);
        Ok(self)
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn template(&self, id: &str) -> Result<&Template> {
        self.templates.iter().find(|t| t.id == id).ok_or_else(|| Error::Lookup(format!("unknown template id `{id}`")))
    }

    pub fn knowledge_mode(&self) -> Option<KnowledgeMode> {
        self.knowledge_mode
    }

    pub fn has_corpus_for(&self, activity: &str) -> bool {
        self.corpus.as_ref().is_some_and(|c| c.contains_key(&canonical_activity(activity)))
    }

    fn finish(&self, sentence: String, activity: &str) -> Result<String> {
        match (&self.knowledge, self.knowledge_mode) {
            (Some(k), Some(mode)) => {
                let key = canonical_activity(activity);
                let entry = k.get(&key).ok_or_else(|| Error::Lookup(format!("no knowledge entry for `{key}`")))?;
                attach_knowledge(&sentence, entry, mode)
            }
            _ => Ok(sentence),
        }
    }

    pub fn render_with(&self, template_id: &str, activity: &str) -> Result<String> {
        let s = render(self.template(template_id)?, activity)?;
        self.finish(s, activity)
    }

    pub fn base_sentence(&self, activity: &str) -> Result<String> {
        self.render_with(BASE_TEMPLATE_ID, activity)
    }

    pub fn sample_training_sentence(&self, activity: &str, policy: SamplingPolicy, seed: u64) -> Result<String> {
        match policy {
            SamplingPolicy::BaseOnly => self.base_sentence(activity),
            SamplingPolicy::RandomTemplate => {
                let i = rng::stream(seed, &[0x7e]).random_range(0..self.templates.len());
                let s = render(&self.templates[i], activity)?;
                self.finish(s, activity)
            }
            SamplingPolicy::RandomCorpus => {
                let key = canonical_activity(activity);
                let variants = self.corpus.as_ref().and_then(|c| c.get(&key)).ok_or_else(|| Error::Lookup(format!("no corpus variants for `{key}`")))?;
                let i = rng::stream(seed, &[0xc0]).random_range(0..variants.len());
                self.finish(collapse_whitespace(&variants[i]), activity)
            }
        }
    }

    /// Sentences for each class under the evaluation policy, in input order.
    pub fn class_sentences(&self, activities: &[String], policy: &EvalPolicy) -> Result<IndexMap<String, Vec<String>>> {
        if activities.is_empty() {
            return Err(Error::arg("no activities given"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in activities {
            if !seen.insert(canonical_activity(a)) {
                return Err(Error::arg(format!("activity `{a}` is duplicated after canonicalization")));
            }
        }
        let mut out = IndexMap::new();
        for a in activities {
            let sentences = match policy {
                EvalPolicy::Base => vec![self.base_sentence(a)?],
                EvalPolicy::Template(id) => vec![self.render_with(id, a)?],
                EvalPolicy::AllTemplates => self.templates.iter().map(|t| self.render_with(&t.id, a)).collect::<Result<_>>()?,
            };
            out.insert(a.clone(), sentences);
        }
        Ok(out)
    }
}

pub fn load_knowledge(path: impl AsRef<Path>) -> Result<Vec<KnowledgeEntry>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<IndexMap<String, Vec<String>>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn mobiact_knowledge() -> Vec<KnowledgeEntry> {
    serde_json::from_str(MOBIACT_KNOWLEDGE).expect("bundled knowledge parses")
}

/// Bundled unseen-activity groups keyed by dataset name.
pub fn bundled_unseen_groups() -> IndexMap<String, Vec<Vec<String>>> {
    serde_json::from_str(UNSEEN_GROUPS).expect("bundled groups parse")
}

/// A corpus made by rendering each activity with the given templates.
pub fn corpus_from_templates(set: &PromptSet, activities: &[String], template_ids: &[&str]) -> Result<IndexMap<String, Vec<String>>> {
    let mut out = IndexMap::new();
    for a in activities {
        let variants = template_ids.iter().map(|id| render(set.template(id)?, a)).collect::<Result<Vec<_>>>()?;
        out.insert(a.clone(), variants);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_set_has_33_valid_templates() {
        let set = PromptSet::shipped();
        assert_eq!(set.templates().len(), 33);
        for t in set.templates() {
            t.validate().unwrap();
        }
    }

    #[test]
    fn base_template_render() {
        let set = PromptSet::shipped();
        assert_eq!(set.base_sentence("walking").unwrap(), "This is wearable sensor data for a person engaged in walking");
        assert_eq!(set.render_with("handcrafted_05", "running").unwrap(), "running");
        assert!(set.base_sentence("").is_err());
        assert!(set.base_sentence("   ").is_err());
    }

    #[test]
    fn placeholder_validation() {
        assert!(Template::new("x", "no placeholder").is_err());
        assert!(Template::new("x", "{activity_name} and {activity_name}").is_err());
        let t = Template::new("x", "  a   {activity_name}  b ").unwrap();
        assert_eq!(t.render("sitting down").unwrap(), "a sitting down b");
    }

    #[test]
    fn knowledge_suffixes() {
        let k = mobiact_knowledge();
        let standing = k.iter().find(|e| e.activity == "Standing").unwrap();
        let s = attach_knowledge("engaged in Standing", standing, KnowledgeMode::BodyParts).unwrap();
        assert_eq!(s, "engaged in Standing. Primarily utilizes the muscles in the legs and core to maintain an upright posture.");
        let both = attach_knowledge("x", standing, KnowledgeMode::Both).unwrap();
        assert_eq!(both, format!("x. {} {}", standing.body_parts, standing.movements));
        let lacking = KnowledgeEntry { activity: "a".into(), body_parts: "b.".into(), movements: "".into() };
        assert!(attach_knowledge("x", &lacking, KnowledgeMode::Movements).is_err());
        assert_eq!(attach_knowledge("Done.", &lacking, KnowledgeMode::BodyParts).unwrap(), "Done. b.");
    }

    #[test]
    fn knowledge_set_applies_to_all_sentences() {
        let set = PromptSet::shipped().with_knowledge(mobiact_knowledge(), KnowledgeMode::Movements).unwrap();
        let s = set.base_sentence("walking").unwrap();
        assert!(s.starts_with("This is wearable sensor data for a person engaged in walking. Rhythmic stepping"));
        assert!(set.base_sentence("swimming").is_err());
        let dup = vec![mobiact_knowledge()[0].clone(), mobiact_knowledge()[0].clone()];
        assert!(PromptSet::shipped().with_knowledge(dup, KnowledgeMode::Both).is_err());
    }

    #[test]
    fn sampling_policies() {
        let set = PromptSet::shipped();
        let a = set.sample_training_sentence("walking", SamplingPolicy::BaseOnly, 1).unwrap();
        let b = set.sample_training_sentence("walking", SamplingPolicy::BaseOnly, 999).unwrap();
        assert_eq!(a, b);
        assert!(set.sample_training_sentence("walking", SamplingPolicy::RandomCorpus, 1).is_err());
        let mut corpus = IndexMap::new();
        corpus.insert("Walking".to_string(), vec!["a person walks".to_string()]);
        let set = set.with_corpus(corpus).unwrap();
        for seed in 0..20 {
            assert_eq!(set.sample_training_sentence(" walking", SamplingPolicy::RandomCorpus, seed).unwrap(), "a person walks");
        }
        let r1 = set.sample_training_sentence("walking", SamplingPolicy::RandomTemplate, 5).unwrap();
        let r2 = set.sample_training_sentence("walking", SamplingPolicy::RandomTemplate, 5).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn random_template_is_uniform() {
        let set = PromptSet::shipped();
        let mut counts: IndexMap<String, usize> = IndexMap::new();
        for seed in 0..10_000u64 {
            *counts.entry(set.sample_training_sentence("x", SamplingPolicy::RandomTemplate, seed).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 33);
        for (s, c) in &counts {
            let f = *c as f64 / 10_000.0;
            assert!((0.022..=0.039).contains(&f), "{s}: {f}");
        }
    }

    #[test]
    fn class_sentence_policies() {
        let set = PromptSet::shipped();
        let acts: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
        let base = set.class_sentences(&acts, &EvalPolicy::Base).unwrap();
        assert_eq!(base.values().map(Vec::len).sum::<usize>(), 6);
        let all = set.class_sentences(&acts, &EvalPolicy::AllTemplates).unwrap();
        assert!(all.values().all(|v| v.len() == 33));
        assert!(set.class_sentences(&acts, &EvalPolicy::Template("nope".into())).is_err());
        let dup = vec!["Walking".to_string(), "walking ".to_string()];
        assert!(set.class_sentences(&dup, &EvalPolicy::Base).is_err());
    }

    #[test]
    fn render_is_injective_for_distinct_activities() {
        let set = PromptSet::shipped();
        for t in set.templates() {
            assert_ne!(render(t, "sitting").unwrap(), render(t, "standing").unwrap());
        }
    }

    #[test]
    fn label_cleanup() {
        assert_eq!(clean_label("  home activity;  household chores: shopping "), "home activity household chores shopping");
        assert_eq!(canonical_activity("  Walking   Upstairs "), "walking upstairs");
    }

    #[test]
    fn bundled_groups_are_disjoint() {
        for (name, groups) in bundled_unseen_groups() {
            let mut seen = std::collections::BTreeSet::new();
            for g in &groups {
                assert!(g.len() >= 2, "{name}");
                for a in g {
                    assert!(seen.insert(canonical_activity(a)), "{name}: {a}");
                }
            }
        }
    }
}
