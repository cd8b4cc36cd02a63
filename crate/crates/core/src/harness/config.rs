use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::Objective;
use crate::prompts::{EvalPolicy, KnowledgeMode, SamplingPolicy};

pub const LR_GRID: [f64; 3] = [1e-3, 1e-4, 5e-4];
pub const WEIGHT_DECAY_GRID: [f64; 2] = [0.0, 1e-4];
pub const BATCH_GRID: [usize; 3] = [128, 256, 512];
pub const EPOCHS: usize = 50;
pub const PATIENCE: usize = 5;

/// How mini-batches are assembled from the training windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    #[default]
    Shuffle,
    /// No label repeats inside a batch; batches hold at most one window per class.
    DistinctLabels,
}

/// Class-embedding aggregation over a class's sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Single,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub objective: Objective,
    pub sampling: SamplingPolicy,
    pub eval_policy: EvalPolicy,
    pub aggregate: Aggregate,
    pub knowledge: Option<KnowledgeMode>,
    pub batching: Batching,
    pub num_folds: usize,
    pub seed: u64,
    /// Permits values outside the declared grids (desk-scale runs).
    pub unsafe_override: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: EPOCHS,
            patience: PATIENCE,
            objective: Objective::Clip,
            sampling: SamplingPolicy::BaseOnly,
            eval_policy: EvalPolicy::Base,
            aggregate: Aggregate::Single,
            knowledge: None,
            batching: Batching::Shuffle,
            num_folds: 5,
            seed: 0,
            unsafe_override: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2".into());
        }
        if self.num_folds < 2 {
            return bad("at least two folds are required".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.unsafe_override {
            return Ok(());
        }
        if !LR_GRID.contains(&self.lr) {
            return bad(format!("learning rate {} not in {LR_GRID:?} (set unsafe_override to allow)", self.lr));
        }
        if !WEIGHT_DECAY_GRID.contains(&self.weight_decay) {
            return bad(format!("weight decay {} not in {WEIGHT_DECAY_GRID:?}", self.weight_decay));
        }
        if !BATCH_GRID.contains(&self.batch_size) {
            return bad(format!("batch size {} not in {BATCH_GRID:?}", self.batch_size));
        }
        if self.epochs != EPOCHS || self.patience != PATIENCE {
            return bad(format!("epochs/patience must be {EPOCHS}/{PATIENCE}"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every combination of the learning-rate, weight-decay and batch grids.
    pub fn grid(&self, batches: &[usize]) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lr in &LR_GRID {
            for &weight_decay in &WEIGHT_DECAY_GRID {
                for &batch_size in batches {
                    out.push(TrainConfig { lr, weight_decay, batch_size, ..self.clone() });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_on_grid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn off_grid_needs_override() {
        let mut c = TrainConfig { batch_size: 32, epochs: 10, ..Default::default() };
        assert!(c.validate().is_err());
        c.unsafe_override = true;
        c.validate().unwrap();
        c.batch_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_roundtrip_and_unknown_fields() {
        let c = TrainConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), c);
        assert!(TrainConfig::from_json(r#"{"lr": 1e-3, "bogus": 1}"#).is_err());
        assert_eq!(TrainConfig::from_json(r#"{"lr": 1e-3}"#).unwrap().lr, 1e-3);
    }

    #[test]
    fn grid_size() {
        assert_eq!(TrainConfig::default().grid(&[256, 512]).len(), 12);
    }
}
