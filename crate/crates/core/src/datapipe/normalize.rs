use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SensorWindow;

/// Per-channel standardization statistics fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; 3],
    /// Population standard deviation.
    pub std: [f64; 3],
    pub epsilon: f64,
}

impl Normalizer {
    pub const EPSILON: f64 = 1e-8;

    pub fn identity() -> Self {
        Self { mean: [0.0; 3], std: [1.0; 3], epsilon: Self::EPSILON }
    }

    pub fn apply_window(&self, w: &SensorWindow) -> SensorWindow {
        let scale = self.std.map(|s| s.max(self.epsilon));
        SensorWindow {
            samples: w.samples.iter().map(|s| std::array::from_fn(|c| ((s[c] as f64 - self.mean[c]) / scale[c]) as f32)).collect(),
            label: w.label.clone(),
            user_id: w.user_id.clone(),
        }
    }
}

pub fn fit_normalizer(train_windows: &[SensorWindow]) -> Result<Normalizer> {
    let count: usize = train_windows.iter().map(SensorWindow::len).sum();
    if count == 0 {
        return Err(Error::arg("cannot fit a normalizer on zero samples"));
    }
    let mut sum = [0.0f64; 3];
    for w in train_windows {
        for s in &w.samples {
            for c in 0..3 {
                sum[c] += s[c] as f64;
            }
        }
    }
    let mean = sum.map(|v| v / count as f64);
    let mut sq = [0.0f64; 3];
    for w in train_windows {
        for s in &w.samples {
            for c in 0..3 {
                let d = s[c] as f64 - mean[c];
                sq[c] += d * d;
            }
        }
    }
    Ok(Normalizer { mean, std: sq.map(|v| (v / count as f64).sqrt()), epsilon: Normalizer::EPSILON })
}

pub fn apply_normalizer(norm: &Normalizer, windows: &[SensorWindow]) -> Vec<SensorWindow> {
    windows.iter().map(|w| norm.apply_window(w)).collect()
}
