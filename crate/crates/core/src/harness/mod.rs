//! Training loops, evaluation protocols, metrics, checkpoints and reports.

mod baseline;
mod checkpoint;
mod config;
mod metrics;
mod plots;
mod protocols;
mod report;
mod train;

pub use baseline::{supervised_baseline, train_baseline, BaselineClassifier, BatchNorm, BASELINE_DROPOUT, BASELINE_HIDDEN};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Aggregate, Batching, TrainConfig, BATCH_GRID, EPOCHS, LR_GRID, PATIENCE, WEIGHT_DECAY_GRID};
pub use metrics::{label_set, macro_f1, mean_std, F1Report};
pub use plots::{fewshot_svg, per_class_svg};
pub use protocols::{
    build_model, classes_of, evaluate_windows, grid_search, run_parallel, run_retrieval_eval, run_standard_eval, run_unseen_eval, select_template,
    self_gallery, split_by_users, standard_splits, text_gallery, thread_count, unit_from_f1, unseen_splits, GridPoint, ProtocolOptions, ProtocolSplit,
    TextSource, UnseenGroupPlan,
};
pub use report::{git_style_hash, input_hash, EvalReport, RetrievalSummary, UnitResult, SCHEMA_VERSION};
pub use train::{dataset_loss, pretrain, TrainingCurves};
pub(crate) use train::{make_batches, sentences_for, EarlyStopping};

/// Lowercase hexadecimal encoding.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
