//! Contrastive objectives with analytic gradients, the learnable temperature and
//! sensor-window augmentations.

mod augment;
mod losses;
mod similarity;

pub use augment::{apply_transform, augment, AugmentationSpec, Transform};
pub use losses::{clip_loss, nt_xent, slip_loss, unicl_loss, unicl_target_matrix, NtXentOutput, SlipOutput, NT_XENT_TAU};
pub use similarity::{similarity_backward, similarity_matrix, SimCache, SimilarityMatrix, TemperatureParam, INIT_TEMPERATURE};

use serde::{Deserialize, Serialize};

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Clip,
    Unicl,
    Slip,
}
