use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Jitter,
    Scaling,
    Rotation,
    Negation,
    TimeFlip,
    ChannelShuffle,
    Permutation,
    TimeWarp,
}

impl Transform {
    pub const ALL: [Transform; 8] = [
        Transform::Jitter,
        Transform::Scaling,
        Transform::Rotation,
        Transform::Negation,
        Transform::TimeFlip,
        Transform::ChannelShuffle,
        Transform::Permutation,
        Transform::TimeWarp,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub transforms: Vec<Transform>,
    pub jitter_sigma: f64,
    pub scaling_sigma: f64,
    pub permutation_segments: usize,
    pub warp_knots: usize,
    pub warp_sigma: f64,
    /// Upper bound on transforms drawn per call (at least one is always applied).
    pub max_per_view: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            transforms: Transform::ALL.to_vec(),
            jitter_sigma: 0.05,
            scaling_sigma: 0.1,
            permutation_segments: 4,
            warp_knots: 4,
            warp_sigma: 0.2,
            max_per_view: 2,
        }
    }
}

type Window = Vec<[f32; 3]>;

fn normal(rng: &mut impl Rng, mean: f64, sigma: f64) -> f64 {
    mean + sigma * rng.sample::<f64, _>(StandardNormal)
}

fn rotation_matrix(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut axis = [0.0f64; 3];
    loop {
        axis.iter_mut().for_each(|a| *a = rng.sample(StandardNormal));
        let n = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            axis.iter_mut().for_each(|a| *a /= n);
            break;
        }
    }
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn interp(w: &[[f32; 3]], pos: f64) -> [f32; 3] {
    let last = w.len() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let i = (pos.floor() as usize).min(last);
    let j = (i + 1).min(last);
    let f = pos - i as f64;
    std::array::from_fn(|c| ((1.0 - f) * f64::from(w[i][c]) + f * f64::from(w[j][c])) as f32)
}

/// Applies one transform.
pub fn apply_transform(window: &[[f32; 3]], t: Transform, spec: &AugmentationSpec, rng: &mut impl Rng) -> Window {
    let n = window.len();
    if n == 0 {
        return Vec::new();
    }
    match t {
        Transform::Jitter => {
            let d = Normal::new(0.0, spec.jitter_sigma).expect("valid sigma");
            window.iter().map(|s| s.map(|v| (f64::from(v) + d.sample(rng)) as f32)).collect()
        }
        Transform::Scaling => {
            let k: [f64; 3] = std::array::from_fn(|_| normal(rng, 1.0, spec.scaling_sigma));
            window.iter().map(|s| std::array::from_fn(|c| (f64::from(s[c]) * k[c]) as f32)).collect()
        }
        Transform::Rotation => {
            let r = rotation_matrix(rng);
            window.iter().map(|s| std::array::from_fn(|i| (0..3).map(|j| r[i][j] * f64::from(s[j])).sum::<f64>() as f32)).collect()
        }
        Transform::Negation => window.iter().map(|s| s.map(|v| -v)).collect(),
        Transform::TimeFlip => window.iter().rev().copied().collect(),
        Transform::ChannelShuffle => {
            let mut perm = [0usize, 1, 2];
            perm.shuffle(rng);
            window.iter().map(|s| perm.map(|c| s[c])).collect()
        }
        Transform::Permutation => {
            let k = spec.permutation_segments.clamp(1, n);
            let bounds: Vec<usize> = (0..=k).map(|i| i * n / k).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(rng);
            order.iter().flat_map(|&s| window[bounds[s]..bounds[s + 1]].iter().copied()).collect()
        }
        Transform::TimeWarp => {
            // Smooth random speed curve through evenly spaced knots, integrated to a
            // monotone time map that keeps both endpoints fixed.
            let knots: Vec<f64> = (0..spec.warp_knots + 2).map(|_| normal(rng, 1.0, spec.warp_sigma).max(0.1)).collect();
            let span = (knots.len() - 1) as f64;
            let speed = |t: usize| {
                let p = if n == 1 { 0.0 } else { t as f64 / (n - 1) as f64 * span };
                let i = (p.floor() as usize).min(knots.len() - 2);
                let f = p - i as f64;
                (1.0 - f) * knots[i] + f * knots[i + 1]
            };
            let mut cum = vec![0.0f64; n];
            for t in 1..n {
                cum[t] = cum[t - 1] + 0.5 * (speed(t - 1) + speed(t));
            }
            let total = cum[n - 1];
            let scale = if total > 0.0 { (n - 1) as f64 / total } else { 1.0 };
            cum.iter().map(|&c| interp(window, c * scale)).collect()
        }
    }
}

/// Draws one to `max_per_view` distinct transforms and applies them in list order.
pub fn augment(window: &[[f32; 3]], spec: &AugmentationSpec, seed: u64) -> Window {
    let mut rng = rng::stream(seed, &[0xa6]);
    if spec.transforms.is_empty() {
        return window.to_vec();
    }
    let max = spec.max_per_view.clamp(1, spec.transforms.len());
    let k = rng.random_range(1..=max);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, spec.transforms.len(), k).into_vec();
    picked.sort_unstable();
    let mut out = window.to_vec();
    for i in picked {
        out = apply_transform(&out, spec.transforms[i], spec, &mut rng);
    }
    out
}
