use crate::error::{Error, Result};

use super::SensorSeries;

/// Linear interpolation onto a uniform grid at `target_hz` covering the original
/// duration. Labels follow the nearest source sample in time.
pub fn resample(series: &SensorSeries, target_hz: f64) -> Result<SensorSeries> {
    if !(target_hz > 0.0) || !target_hz.is_finite() {
        return Err(Error::arg(format!("target rate {target_hz} must be positive")));
    }
    series.validate()?;
    if series.sample_rate_hz == target_hz {
        return Ok(series.clone());
    }
    let n = series.len();
    let src_hz = series.sample_rate_hz;
    // Same duration as the input; grid points past the last sample hold its value.
    let out_len = ((n as f64 * target_hz / src_hz).round() as usize).max(1);
    let mut channels: [Vec<f32>; 3] = Default::default();
    let mut labels = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let pos = (j as f64 / target_hz * src_hz).min((n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = pos - lo as f64;
        for (out, src) in channels.iter_mut().zip(&series.channels) {
            let v = src[lo] as f64 * (1.0 - frac) + src[hi] as f64 * frac;
            out.push(v as f32);
        }
        let nearest = (pos.round() as usize).min(n - 1);
        labels.push(series.labels[nearest].clone());
    }
    SensorSeries::new(series.user_id.clone(), channels, target_hz, labels)
}
