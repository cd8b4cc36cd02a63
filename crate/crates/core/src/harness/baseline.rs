use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::metrics::macro_f1;
use super::protocols::run_parallel;
use super::report::{input_hash, EvalReport, UnitResult};
use super::train::{check_user_disjoint, make_batches, EarlyStopping};
use crate::datapipe::{apply_normalizer, fit_normalizer, make_user_folds, Dataset, SensorWindow};
use crate::encoders::{windows_to_tensor, ImuCache, ImuEncoder, Linear, Module, SensorEncoder};
use crate::error::{Error, Result};
use crate::numerics::ops::{self, BatchNormCache};
use crate::numerics::{adam_step, AdamState, Scalar, Tensor};
use crate::rng;

pub const BASELINE_HIDDEN: [usize; 2] = [256, 128];
pub const BASELINE_DROPOUT: f64 = 0.2;

/// Batch norm over features. Inference statistics are recomputed over the whole
/// training split after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::from_fn(&[features], |_| F::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: vec![F::zero(); features],
            running_var: vec![F::one(); features],
        }
    }

    /// Sets the inference statistics to the mean and unbiased variance of `z`.
    fn fit(&mut self, z: &Tensor<F>) {
        let (n, f) = (z.dim(0), z.dim(1));
        let (mut mean, mut var) = (vec![0.0f64; f], vec![0.0f64; f]);
        for row in z.data().chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.to_f64_lossy();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for row in z.data().chunks(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v.to_f64_lossy() - m).powi(2);
            }
        }
        let denom = (n.max(2) - 1) as f64;
        self.running_mean = mean.into_iter().map(F::from_f64_lossy).collect();
        self.running_var = var.into_iter().map(|s| F::from_f64_lossy(s / denom)).collect();
    }
}

/// IMU encoder followed by an MLP classifier. Hidden blocks are
/// linear, batch norm, ReLU and dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineClassifier<F> {
    pub imu: ImuEncoder<F>,
    pub hidden: Vec<(Linear<F>, BatchNorm<F>)>,
    pub out: Linear<F>,
    pub classes: Vec<String>,
}

pub struct BaselineCache<F> {
    imu: ImuCache<F>,
    inputs: Vec<Tensor<F>>,
    bn: Vec<BatchNormCache<F>>,
    pre_relu: Vec<Tensor<F>>,
    masks: Vec<Option<Vec<F>>>,
    last: Tensor<F>,
}

impl<F: Scalar> BaselineClassifier<F> {
    pub fn new(window_len: usize, classes: Vec<String>, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(rng::derive(seed, &[rng::tag("baseline-init")]));
        let imu = ImuEncoder::new(window_len, &mut r);
        let mut f_in = imu.feature_dim();
        let hidden = BASELINE_HIDDEN
            .iter()
            .map(|&h| {
                let l = Linear::new(f_in, h, &mut r);
                f_in = h;
                (l, BatchNorm::new(h))
            })
            .collect();
        let out = Linear::new(f_in, classes.len(), &mut r);
        Self { imu, hidden, out, classes }
    }

    /// Logits `[B, num_classes]`. Training mode uses batch statistics and dropout.
    pub fn forward(&self, x: &Tensor<F>, training: bool, seed: u64) -> Result<(Tensor<F>, BaselineCache<F>)> {
        let (mut h, imu) = self.imu.encode(x, training, rng::derive(seed, &[0]))?;
        let mut cache = BaselineCache { imu, inputs: Vec::new(), bn: Vec::new(), pre_relu: Vec::new(), masks: Vec::new(), last: Tensor::zeros(&[0]) };
        for (i, (lin, bn)) in self.hidden.iter().enumerate() {
            let z = lin.forward(&h)?;
            let normed = if training {
                let (y, c) = ops::batch_norm_train(&z, &bn.gamma, &bn.beta)?;
                cache.bn.push(c);
                y
            } else {
                ops::batch_norm_infer(&z, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var)
            };
            let a = ops::relu(&normed);
            let (d, mask) = ops::dropout(&a, BASELINE_DROPOUT, training, rng::derive(seed, &[1, i as u64]))?;
            cache.inputs.push(h);
            cache.pre_relu.push(normed);
            cache.masks.push(mask);
            h = d;
        }
        let logits = self.out.forward(&h)?;
        cache.last = h;
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients from `d loss / d logits`. Needs a training-mode cache.
    pub fn backward(&mut self, cache: &BaselineCache<F>, grad_logits: &Tensor<F>) -> Result<()> {
        if cache.bn.len() != self.hidden.len() {
            return Err(Error::arg("baseline backward needs a training-mode forward cache"));
        }
        let mut g = self.out.backward(&cache.last, grad_logits)?;
        for i in (0..self.hidden.len()).rev() {
            g = ops::dropout_backward(cache.masks[i].as_deref(), &g);
            g = ops::relu_backward(&cache.pre_relu[i], &g);
            let (lin, bn) = &mut self.hidden[i];
            let bg = ops::batch_norm_backward(&cache.bn[i], &bn.gamma, &g);
            bn.gamma.accumulate_grad(bg.gamma.data());
            bn.beta.accumulate_grad(bg.beta.data());
            g = lin.backward(&cache.inputs[i], &bg.x)?;
        }
        self.imu.backward(&cache.imu, &g)?;
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out: Vec<&mut Tensor<F>> = self.imu.named_params_mut().into_iter().map(|(_, t)| t).collect();
        for (lin, bn) in &mut self.hidden {
            out.extend([&mut lin.w, &mut lin.b, &mut bn.gamma, &mut bn.beta]);
        }
        out.extend([&mut self.out.w, &mut self.out.b]);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Recomputes every batch norm's inference statistics over `windows`, layer by layer.
    pub fn calibrate(&mut self, windows: &[SensorWindow]) -> Result<()> {
        let mut rows = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let (f, _) = self.imu.encode(&windows_to_tensor(chunk)?, false, 0)?;
            rows.extend(f.data().chunks(f.dim(1)).map(<[F]>::to_vec));
        }
        let mut h = Tensor::from_rows(&rows)?;
        for (lin, bn) in &mut self.hidden {
            let z = lin.forward(&h)?;
            bn.fit(&z);
            h = ops::relu(&ops::batch_norm_infer(&z, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var));
        }
        Ok(())
    }

    fn targets(&self, windows: &[SensorWindow]) -> Result<Tensor<F>> {
        let c = self.classes.len();
        let mut t = Tensor::zeros(&[windows.len(), c]);
        for (i, w) in windows.iter().enumerate() {
            let k = self.classes.iter().position(|x| *x == w.label).ok_or_else(|| Error::arg(format!("label `{}` is not a baseline class", w.label)))?;
            t.data_mut()[i * c + k] = F::one();
        }
        Ok(t)
    }

    /// Predicted class names for normalized windows (inference mode).
    pub fn predict(&self, windows: &[SensorWindow]) -> Result<Vec<String>> {
        let mut preds = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let (logits, _) = self.forward(&windows_to_tensor(chunk)?, false, 0)?;
            for i in 0..chunk.len() {
                let row = logits.row(i);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                preds.push(self.classes[best].clone());
            }
        }
        Ok(preds)
    }

    fn dataset_loss(&self, windows: &[SensorWindow]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in windows.chunks(256) {
            let (logits, _) = self.forward(&windows_to_tensor(chunk)?, false, 0)?;
            let (l, _) = ops::softmax_xent_rows(&logits, &self.targets(chunk)?)?;
            total += l.to_f64_lossy() * chunk.len() as f64;
        }
        Ok(total / windows.len() as f64)
    }
}

/// Trains on normalized windows with cross entropy and early stopping on validation loss.
pub fn train_baseline(config: &TrainConfig, train: &[SensorWindow], val: &[SensorWindow], model: &mut BaselineClassifier<f32>) -> Result<Vec<f64>> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::arg("baseline training needs nonempty train and validation splits"));
    }
    let labels: Vec<String> = train.iter().map(|w| w.label.clone()).collect();
    let mut adam = AdamState::new(config.lr, config.weight_decay);
    let mut stop = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut val_curve = Vec::new();
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let batches = make_batches(&labels, config.batch_size, super::Batching::Shuffle, &mut rng::stream(config.seed, &[rng::tag("baseline-epoch"), e]));
        for (b, idx) in batches.iter().enumerate() {
            let ws: Vec<SensorWindow> = idx.iter().map(|&i| train[i].clone()).collect();
            model.zero_grad();
            let (logits, cache) = model.forward(&windows_to_tensor(&ws)?, true, rng::derive(config.seed, &[rng::tag("baseline-step"), e, b as u64]))?;
            let (loss, g) = ops::softmax_xent_rows(&logits, &model.targets(&ws)?)?;
            if !loss.is_finite() {
                return Err(Error::NumericGuard { row: b, message: format!("non-finite baseline loss in epoch {epoch}") });
            }
            model.backward(&cache, &g)?;
            adam_step(&mut model.params_mut(), &mut adam)?;
        }
        model.calibrate(train)?;
        let v = model.dataset_loss(val)?;
        val_curve.push(v);
        if stop.observe(epoch, v) {
            best = model.clone();
        }
        if stop.should_stop(epoch) {
            break;
        }
    }
    *model = best;
    model.params_mut().into_iter().for_each(Tensor::clear_grad);
    Ok(val_curve)
}

/// Supervised baseline under the user-disjoint fold protocol.
pub fn supervised_baseline(dataset: &Dataset, config: &TrainConfig) -> Result<EvalReport> {
    config.validate()?;
    let users = dataset.users();
    let plan = make_user_folds(&users, config.num_folds, config.seed)?;
    plan.audit(&users)?;
    let classes = dataset.activities();
    let units = run_parallel(plan.folds.len(), |i| {
        let f = &plan.folds[i];
        let (train, val, test) = (dataset.for_users(&f.train_users).windows, dataset.for_users(&f.val_users).windows, dataset.for_users(&f.test_users).windows);
        check_user_disjoint(&train, &test, "train and test splits")?;
        let norm = fit_normalizer(&train)?;
        let seed = rng::derive(config.seed, &[rng::tag("fold"), i as u64]);
        let mut model = BaselineClassifier::new(config.model.window_len, classes.clone(), seed);
        let cfg = TrainConfig { seed, ..config.clone() };
        let curve = train_baseline(&cfg, &apply_normalizer(&norm, &train), &apply_normalizer(&norm, &val), &mut model)?;
        let test_n = apply_normalizer(&norm, &test);
        let preds = model.predict(&test_n)?;
        let truths: Vec<String> = test.iter().map(|w| w.label.clone()).collect();
        let f1 = macro_f1(&preds, &truths, &classes)?;
        let mut details = IndexMap::new();
        details.insert("epochs_run".into(), serde_json::json!(curve.len()));
        details.insert("val_loss".into(), serde_json::json!(curve));
        Ok(UnitResult { name: format!("fold {i}"), macro_f1: f1.macro_f1, per_class_f1: f1.per_class, absent_classes: f1.absent_classes, details })
    })?;
    let hash = input_hash(config, &dataset.content_hash(), &["baseline"])?;
    let mut report = EvalReport::new("baseline", config, hash, units);
    report.notes.push(format!("user audit passed for {} folds", plan.folds.len()));
    Ok(report)
}
