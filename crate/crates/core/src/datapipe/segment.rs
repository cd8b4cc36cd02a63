use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::{resample, SensorSeries, SensorWindow, TARGET_HZ, WINDOW_OVERLAP, WINDOW_SECONDS};

/// Sliding windows over a 50 Hz series. Windows that would run past the end are
/// dropped; a series shorter than one window yields no windows.
pub fn segment(series: &SensorSeries, window_seconds: f64, overlap_fraction: f64) -> Result<Vec<SensorWindow>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::arg(format!("overlap {overlap_fraction} outside [0, 1)")));
    }
    if !(window_seconds > 0.0) {
        return Err(Error::arg("window length must be positive"));
    }
    if (series.sample_rate_hz - TARGET_HZ).abs() > 1e-9 {
        return Err(Error::arg(format!("segment expects {TARGET_HZ} Hz input, got {} Hz; resample first", series.sample_rate_hz)));
    }
    let len = (window_seconds * TARGET_HZ).round() as usize;
    let hop = ((len as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let n = series.len();
    let mut out = Vec::new();
    let mut start = 0;
    while len > 0 && start + len <= n {
        let samples = (start..start + len).map(|t| [series.channels[0][t], series.channels[1][t], series.channels[2][t]]).collect();
        out.push(SensorWindow { samples, label: majority_label(&series.labels[start..start + len]).to_string(), user_id: series.user_id.clone() });
        start += hop;
    }
    Ok(out)
}

/// Most frequent label; ties go to the label that occurs first.
fn majority_label(labels: &[String]) -> &str {
    let mut counts: IndexMap<&str, usize> = IndexMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    let mut best = ("", 0);
    for (label, c) in counts {
        if c > best.1 {
            best = (label, c);
        }
    }
    best.0
}

/// Resample to 50 Hz then cut 2 s windows with 50% overlap.
pub fn windows_from_series(series: &SensorSeries) -> Result<Vec<SensorWindow>> {
    let at_rate = resample(series, TARGET_HZ)?;
    segment(&at_rate, WINDOW_SECONDS, WINDOW_OVERLAP)
}
