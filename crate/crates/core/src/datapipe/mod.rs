//! Accelerometer ingestion: CSV loading, resampling, windowing, normalization, user
//! folds, and a synthetic generator for desk-scale experiments.

mod csv_format;
mod folds;
mod normalize;
mod resample;
mod segment;
pub mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_format::{load_csv, read_csv, write_csv, CSV_HEADER};
pub use folds::{make_user_folds, Fold, FoldPlan};
pub use normalize::{apply_normalizer, fit_normalizer, Normalizer};
pub use resample::resample;
pub use segment::{segment, windows_from_series};
pub use synth::{synth_generate, synth_knowledge, synth_random_knowledge, DomainShiftSpec, SynthSpec};

/// Rate every window is expressed in.
pub const TARGET_HZ: f64 = 50.0;
/// Samples per window (2 s at 50 Hz).
pub const WINDOW_LEN: usize = 100;
pub const WINDOW_SECONDS: f64 = 2.0;
pub const WINDOW_OVERLAP: f64 = 0.5;

/// One contiguous tri-axial recording of a single user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSeries {
    pub user_id: String,
    pub channels: [Vec<f32>; 3],
    pub sample_rate_hz: f64,
    /// Activity label of each sample.
    pub labels: Vec<String>,
}

impl SensorSeries {
    pub fn new(user_id: impl Into<String>, channels: [Vec<f32>; 3], sample_rate_hz: f64, labels: Vec<String>) -> Result<Self> {
        let s = Self { user_id: user_id.into(), channels, sample_rate_hz, labels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels[0].len();
        if n == 0 {
            return Err(Error::arg("series must contain at least one sample"));
        }
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::arg("series channels differ in length"));
        }
        if self.labels.len() != n {
            return Err(Error::arg(format!("series has {} labels for {n} samples", self.labels.len())));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::arg(format!("sample rate {} must be positive", self.sample_rate_hz)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// A fixed-length labelled segment, the unit of training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    /// `[time][channel]`.
    pub samples: Vec<[f32; 3]>,
    pub label: String,
    pub user_id: String,
}

impl SensorWindow {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, ch: usize) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().map(move |s| s[ch])
    }
}

/// Windows plus helpers for the evaluation protocols.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub windows: Vec<SensorWindow>,
}

impl Dataset {
    pub fn new(windows: Vec<SensorWindow>) -> Self {
        Self { windows }
    }

    /// Resamples and segments every series with the default window settings.
    pub fn from_series(series: &[SensorSeries]) -> Result<Self> {
        let mut windows = Vec::new();
        for s in series {
            windows.extend(windows_from_series(s)?);
        }
        Ok(Self { windows })
    }

    pub fn users(&self) -> BTreeSet<String> {
        self.windows.iter().map(|w| w.user_id.clone()).collect()
    }

    /// Sorted distinct labels.
    pub fn activities(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.windows.iter().map(|w| w.label.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn filter(&self, mut keep: impl FnMut(&SensorWindow) -> bool) -> Dataset {
        Dataset { windows: self.windows.iter().filter(|w| keep(w)).cloned().collect() }
    }

    pub fn for_users(&self, users: &BTreeSet<String>) -> Dataset {
        self.filter(|w| users.contains(&w.user_id))
    }

    /// Content digest of all samples, labels and users, independent of window order.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for w in &self.windows {
            h.update(w.user_id.as_bytes());
            h.update([0u8]);
            h.update(w.label.as_bytes());
            h.update([0u8]);
            for s in &w.samples {
                for v in s {
                    h.update(v.to_le_bytes());
                }
            }
        }
        crate::harness::hex(&h.finalize())
    }
}
