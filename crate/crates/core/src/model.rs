//! The joint sensor-language model: IMU encoder, text provider, two projection heads,
//! a SimCLR head for the composite objective, and the learnable temperature.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::datapipe::{Normalizer, SensorWindow, WINDOW_LEN};
use crate::encoders::{
    gather_rows, scatter_add_rows, windows_to_tensor, HashTextEncoder, ImuEncoder, Module, ProjectionHead, SensorEncoder, TextProvider, IMU_FEATURE_DIM,
    JOINT_DIM,
};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::objectives::{
    augment, clip_loss, nt_xent, similarity_backward, similarity_matrix, unicl_loss, unicl_target_matrix, AugmentationSpec, Objective, TemperatureParam,
    NT_XENT_TAU,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub joint_dim: usize,
    pub head_hidden: usize,
    pub window_len: usize,
    pub simclr_hidden: usize,
    pub simclr_dim: usize,
    pub hash_buckets: usize,
    pub hash_dim: usize,
    pub slip_lambda: f64,
    pub nt_xent_tau: f64,
    pub augmentation: AugmentationSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joint_dim: JOINT_DIM,
            head_hidden: 512,
            window_len: WINDOW_LEN,
            simclr_hidden: 256,
            simclr_dim: 128,
            hash_buckets: crate::encoders::HASH_BUCKETS,
            hash_dim: crate::encoders::HASH_TEXT_DIM,
            slip_lambda: 1.0,
            nt_xent_tau: NT_XENT_TAU,
            augmentation: AugmentationSpec::default(),
        }
    }
}

/// Which parameters an optimizer step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    /// Everything trainable under the objective.
    Full,
    /// Projection heads and temperature only.
    Heads,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub contrastive: f64,
    pub ssl: f64,
}

/// Sentences reduced to unique rows plus the gather index for each batch row.
pub(crate) fn dedup(sentences: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut map: IndexMap<&str, usize> = IndexMap::new();
    let idx = sentences
        .iter()
        .map(|s| {
            let n = map.len();
            *map.entry(s.as_str()).or_insert(n)
        })
        .collect();
    (map.keys().map(|s| s.to_string()).collect(), idx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsModel<F> {
    pub config: ModelConfig,
    pub imu: ImuEncoder<F>,
    pub text: TextProvider<F>,
    pub sensor_head: ProjectionHead<F>,
    pub text_head: ProjectionHead<F>,
    pub simclr_head: ProjectionHead<F>,
    pub temperature: TemperatureParam<F>,
    pub normalizer: Normalizer,
}

/// Contrastive loss on a similarity matrix; returns the loss and `dL/dC`.
fn contrastive<F: Scalar>(c: &Tensor<F>, labels: &[String], objective: Objective) -> Result<(F, Tensor<F>)> {
    match objective {
        Objective::Clip | Objective::Slip => clip_loss(c),
        Objective::Unicl => unicl_loss(c, &unicl_target_matrix(labels)),
    }
}

impl<F: Scalar> NlsModel<F> {
    /// Model with a freshly initialised trainable hash text encoder.
    pub fn new_hash(config: ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::tag("text-init")]);
        let text = TextProvider::Hash(HashTextEncoder::with_dims(config.hash_buckets, config.hash_dim, &mut r));
        Self::new(config, text, seed)
    }

    pub fn new(config: ModelConfig, text: TextProvider<F>, seed: u64) -> Self {
        let init = |name: &str| rng::stream(seed, &[rng::tag(name)]);
        let imu = ImuEncoder::new(config.window_len, &mut init("imu-init"));
        let sensor_head = ProjectionHead::new(IMU_FEATURE_DIM, config.head_hidden, config.joint_dim, &mut init("sensor-head-init"));
        let text_head = ProjectionHead::new(text.output_dim(), config.head_hidden, config.joint_dim, &mut init("text-head-init"));
        let simclr_head = ProjectionHead::new(IMU_FEATURE_DIM, config.simclr_hidden, config.simclr_dim, &mut init("simclr-head-init"));
        Self { config, imu, text, sensor_head, text_head, simclr_head, temperature: TemperatureParam::new(), normalizer: Normalizer::identity() }
    }

    pub fn cast<G: Scalar>(&self) -> NlsModel<G> {
        NlsModel {
            config: self.config.clone(),
            imu: self.imu.cast(),
            text: self.text.cast(),
            sensor_head: self.sensor_head.cast(),
            text_head: self.text_head.cast(),
            simclr_head: self.simclr_head.cast(),
            temperature: self.temperature.cast(),
            normalizer: self.normalizer.clone(),
        }
    }

    /// All parameters with stable dotted names, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<_>, prefix: &str, v: Vec<(String, _)>| {
            out.extend(v.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        };
        push(&mut out, "imu", self.imu.named_params());
        push(&mut out, "text", self.text.named_params());
        push(&mut out, "sensor_head", self.sensor_head.named_params());
        push(&mut out, "text_head", self.text_head.named_params());
        push(&mut out, "simclr_head", self.simclr_head.named_params());
        out.push(("temperature.log_scale".into(), &self.temperature.log_scale));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<_>, prefix: &str, v: Vec<(String, _)>| {
            out.extend(v.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        };
        push(&mut out, "imu", self.imu.named_params_mut());
        push(&mut out, "text", self.text.named_params_mut());
        push(&mut out, "sensor_head", self.sensor_head.named_params_mut());
        push(&mut out, "text_head", self.text_head.named_params_mut());
        push(&mut out, "simclr_head", self.simclr_head.named_params_mut());
        out.push(("temperature.log_scale".into(), &mut self.temperature.log_scale));
        out
    }

    fn in_scope(name: &str, scope: ParamScope, objective: Objective) -> bool {
        let head = name.starts_with("sensor_head.") || name.starts_with("text_head.") || name.starts_with("temperature.");
        match scope {
            ParamScope::Heads => head,
            ParamScope::Full => {
                head || name.starts_with("imu.") || name.starts_with("text.") || (objective == Objective::Slip && name.starts_with("simclr_head."))
            }
        }
    }

    /// Trainable tensors for an optimizer, in a fixed order.
    pub fn params_mut(&mut self, scope: ParamScope, objective: Objective) -> Vec<&mut Tensor<F>> {
        self.named_params_mut().into_iter().filter(|(n, _)| Self::in_scope(n, scope, objective)).map(|(_, t)| t).collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Drops all gradient buffers.
    pub fn clear_grads(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.clear_grad();
        }
    }

    /// Replaces parameter values in `named_params` order.
    pub fn set_params(&mut self, values: &[Tensor<F>]) -> Result<()> {
        let mut params = self.named_params_mut();
        if params.len() != values.len() {
            return Err(Error::arg(format!("expected {} parameter tensors, got {}", params.len(), values.len())));
        }
        for ((name, p), v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::arg(format!("shape mismatch for {name}: {:?} vs {:?}", p.shape(), v.shape())));
            }
            p.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }

    pub fn after_step(&mut self) {
        self.temperature.clamp_stored();
    }

    /// Frozen-mode sensor features `[N, 128]` of already-normalized windows.
    pub fn sensor_features(&self, windows: &[SensorWindow]) -> Result<Tensor<F>> {
        let mut rows = Vec::with_capacity(windows.len() * IMU_FEATURE_DIM);
        for chunk in windows.chunks(256) {
            let x = windows_to_tensor(chunk)?;
            let (f, _) = self.imu.encode(&x, false, 0)?;
            rows.extend_from_slice(f.data());
        }
        Tensor::new(&[windows.len(), IMU_FEATURE_DIM], rows)
    }

    /// Text-provider features for each sentence.
    pub fn text_features(&self, sentences: &[String]) -> Result<Tensor<F>> {
        Ok(self.text.encode(sentences)?.0)
    }

    /// Joint-space embeddings of already-normalized windows.
    pub fn embed_normalized(&self, windows: &[SensorWindow]) -> Result<Tensor<F>> {
        let f = self.sensor_features(windows)?;
        Ok(self.sensor_head.forward(&f)?.0)
    }

    /// Joint-space embeddings of raw windows; the stored normalizer is applied first.
    pub fn embed_windows(&self, windows: &[SensorWindow]) -> Result<Tensor<F>> {
        let normalized: Vec<SensorWindow> = windows.iter().map(|w| self.normalizer.apply_window(w)).collect();
        self.embed_normalized(&normalized)
    }

    pub fn embed_sentences(&self, sentences: &[String]) -> Result<Tensor<F>> {
        if sentences.is_empty() {
            return Err(Error::arg("no sentences to embed"));
        }
        let (unique, idx) = dedup(sentences);
        let t = self.text_features(&unique)?;
        Ok(gather_rows(&self.text_head.forward(&t)?.0, &idx))
    }

    /// Contrastive loss from precomputed features. Gradients reach the heads and the
    /// temperature when `backward` is set; returns the feature gradients as well.
    #[allow(clippy::type_complexity)]
    pub fn heads_loss(
        &mut self,
        sensor_feats: &Tensor<F>,
        text_feats: &Tensor<F>,
        text_idx: &[usize],
        labels: &[String],
        objective: Objective,
        backward: bool,
    ) -> Result<(F, Option<(Tensor<F>, Tensor<F>)>)> {
        let n = sensor_feats.dim(0);
        if text_idx.len() != n || labels.len() != n {
            return Err(Error::arg("batch rows, sentences and labels must align"));
        }
        let (s, s_cache) = self.sensor_head.forward(sensor_feats)?;
        let (t_unique, t_cache) = self.text_head.forward(text_feats)?;
        let t = gather_rows(&t_unique, text_idx);
        let (sim, cache) = similarity_matrix(&s, &t, &self.temperature)?;
        let (loss, g_c) = contrastive(&sim.c, labels, objective)?;
        if !backward {
            return Ok((loss, None));
        }
        let (g_s, g_t) = similarity_backward(&cache, &mut self.temperature, sim.tau, &g_c)?;
        let g_sf = self.sensor_head.backward(&s_cache, &g_s)?;
        let g_tu = scatter_add_rows(&g_t, text_idx, t_unique.dim(0));
        let g_tf = self.text_head.backward(&t_cache, &g_tu)?;
        Ok((loss, Some((g_sf, g_tf))))
    }

    /// Full forward pass on normalized windows and their paired sentences. With
    /// `backward`, gradients accumulate into every parameter the objective trains.
    pub fn batch_loss(
        &mut self,
        windows: &[SensorWindow],
        sentences: &[String],
        objective: Objective,
        training: bool,
        backward: bool,
        seed: u64,
    ) -> Result<StepLoss> {
        if windows.len() != sentences.len() || windows.is_empty() {
            return Err(Error::arg("windows and sentences must be nonempty and aligned"));
        }
        let labels: Vec<String> = windows.iter().map(|w| w.label.clone()).collect();
        let x = windows_to_tensor(windows)?;
        let (feats, imu_cache) = self.imu.encode(&x, training, rng::derive(seed, &[1]))?;
        let (unique, idx) = dedup(sentences);
        let (text_feats, text_cache) = self.text.encode(&unique)?;
        let (loss, grads) = self.heads_loss(&feats, &text_feats, &idx, &labels, objective, backward)?;
        let mut out = StepLoss { total: loss.to_f64_lossy(), contrastive: loss.to_f64_lossy(), ssl: 0.0 };
        let mut g_feats = None;
        if let Some((g_sf, g_tf)) = grads {
            self.text.backward(text_cache.as_ref(), &g_tf)?;
            g_feats = Some(g_sf);
        }
        if objective == Objective::Slip {
            let spec = self.config.augmentation.clone();
            let view = |v: u64| -> Vec<SensorWindow> {
                windows
                    .iter()
                    .enumerate()
                    .map(|(i, w)| SensorWindow {
                        samples: augment(&w.samples, &spec, rng::derive(seed, &[2, v, i as u64])),
                        label: w.label.clone(),
                        user_id: w.user_id.clone(),
                    })
                    .collect()
            };
            let (v1, v2) = (windows_to_tensor::<F>(&view(0))?, windows_to_tensor::<F>(&view(1))?);
            let (f1, c1) = self.imu.encode(&v1, training, rng::derive(seed, &[3]))?;
            let (f2, c2) = self.imu.encode(&v2, training, rng::derive(seed, &[4]))?;
            let (z1, h1) = self.simclr_head.forward(&f1)?;
            let (z2, h2) = self.simclr_head.forward(&f2)?;
            let nt = nt_xent(&z1, &z2, self.config.nt_xent_tau)?;
            let lam = self.config.slip_lambda;
            out.ssl = nt.loss.to_f64_lossy();
            out.total += lam * out.ssl;
            if backward {
                let l = F::from_f64_lossy(lam);
                let gf1 = self.simclr_head.backward(&h1, &nt.grad_z1.map(|g| g * l))?;
                let gf2 = self.simclr_head.backward(&h2, &nt.grad_z2.map(|g| g * l))?;
                self.imu.backward(&c1, &gf1)?;
                self.imu.backward(&c2, &gf2)?;
            }
        }
        if let Some(g) = g_feats {
            self.imu.backward(&imu_cache, &g)?;
        }
        Ok(out)
    }
}
