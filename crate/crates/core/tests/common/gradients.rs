//! Finite-difference checks of every differentiable op, loss and the full model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use snls::datapipe::SensorWindow;
use snls::encoders::{HashTextEncoder, Module, ProjectionHead, SensorEncoder};
use snls::model::{ModelConfig, NlsModel};
use snls::numerics::ops::{self, Padding};
use snls::numerics::{grad_check, grad_check_sampled, Tensor};
use snls::objectives::{clip_loss, nt_xent, similarity_backward, similarity_matrix, slip_loss, unicl_loss, unicl_target_matrix, Objective, TemperatureParam};
use snls::rng;
use snls::Result;

pub const H: f64 = 1e-6;

pub struct Check {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// `sum(w * y)` with fixed random weights so every output coordinate matters.
fn weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[0x77]);
    rand_t(&mut r, shape)
}

fn weighted(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn op(name: &'static str, max: Result<f64>) -> Check {
    Check { name, max_rel_error: max.unwrap(), tolerance: 1e-4 }
}

pub fn op_checks() -> Vec<Check> {
    let mut r = rng::stream(2024, &[]);
    let mut out = Vec::new();

    for (name, padding) in [("conv1d reflect", Padding::Reflect), ("conv1d zero", Padding::Zero)] {
        let inputs = vec![rand_t(&mut r, &[2, 3, 7]), rand_t(&mut r, &[4, 3, 3]), rand_t(&mut r, &[4])];
        let w = weights(&[2, 4, 7], 1);
        out.push(op(
            name,
            grad_check(
                |x| {
                    let y = ops::conv1d(&x[0], &x[1], &x[2], padding)?;
                    let g = ops::conv1d_backward(&x[0], &x[1], &w, padding)?;
                    Ok((weighted(&y, &w), vec![g.x, g.w, g.b]))
                },
                &inputs,
                H,
            ),
        ));
    }

    let inputs = vec![rand_t(&mut r, &[3, 5]), rand_t(&mut r, &[4, 5]), rand_t(&mut r, &[4])];
    let w = weights(&[3, 4], 2);
    out.push(op(
        "linear",
        grad_check(
            |x| {
                let y = ops::linear(&x[0], &x[1], &x[2])?;
                let g = ops::linear_backward(&x[0], &x[1], &w)?;
                Ok((weighted(&y, &w), vec![g.x, g.w, g.b]))
            },
            &inputs,
            H,
        ),
    ));

    let inputs = vec![rand_t(&mut r, &[4, 6])];
    let w = weights(&[4, 6], 3);
    out.push(op("relu", grad_check(|x| Ok((weighted(&ops::relu(&x[0]), &w), vec![ops::relu_backward(&x[0], &w)])), &inputs, H)));
    out.push(op(
        "dropout",
        grad_check(
            |x| {
                let (y, mask) = ops::dropout(&x[0], 0.2, true, 9)?;
                Ok((weighted(&y, &w), vec![ops::dropout_backward(mask.as_deref(), &w)]))
            },
            &inputs,
            H,
        ),
    ));

    let inputs = vec![rand_t(&mut r, &[2, 3, 8])];
    let w = weights(&[2, 3], 4);
    out.push(op(
        "max over time",
        grad_check(
            |x| {
                let (y, idx) = ops::max_over_time(&x[0])?;
                Ok((weighted(&y, &w), vec![ops::max_over_time_backward(x[0].shape(), &idx, &w)]))
            },
            &inputs,
            H,
        ),
    ));

    let inputs = vec![rand_t(&mut r, &[3, 4])];
    let w = weights(&[3, 4], 5);
    out.push(op(
        "l2 normalize",
        grad_check(
            |x| {
                let (y, norms) = ops::l2_normalize_rows(&x[0])?;
                Ok((weighted(&y, &w), vec![ops::l2_normalize_rows_backward(&y, &norms, &w)]))
            },
            &inputs,
            H,
        ),
    ));

    let targets = Tensor::new(&[3, 4], vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.25, 0.25, 0.25, 0.25]).unwrap();
    out.push(op(
        "softmax cross entropy",
        grad_check(
            |x| {
                let (l, g) = ops::softmax_xent_rows(&x[0], &targets)?;
                Ok((l, vec![g]))
            },
            &[rand_t(&mut r, &[3, 4]).map(|v| 3.0 * v)],
            H,
        ),
    ));

    let inputs = vec![rand_t(&mut r, &[5, 3]), rand_t(&mut r, &[3]), rand_t(&mut r, &[3])];
    let w = weights(&[5, 3], 6);
    out.push(op(
        "batch norm",
        grad_check(
            |x| {
                let (y, cache) = ops::batch_norm_train(&x[0], &x[1], &x[2])?;
                let g = ops::batch_norm_backward(&cache, &x[1], &w);
                Ok((weighted(&y, &w), vec![g.x, g.gamma, g.beta]))
            },
            &inputs,
            H,
        ),
    ));

    let head: ProjectionHead<f64> = ProjectionHead::new(6, 8, 5, &mut r);
    let x0 = rand_t(&mut r, &[3, 6]);
    let mut inputs = vec![x0];
    inputs.extend(head.named_params().into_iter().map(|(_, t)| t.clone()));
    let w = weights(&[3, 5], 7);
    out.push(op(
        "projection head",
        grad_check(
            |x| {
                let mut h = head.clone();
                for ((_, p), v) in h.named_params_mut().into_iter().zip(&x[1..]) {
                    p.data_mut().copy_from_slice(v.data());
                }
                let (y, cache) = h.forward(&x[0])?;
                let gx = h.backward(&cache, &w)?;
                let mut grads = vec![gx];
                grads.extend(h.named_params().into_iter().map(|(_, t)| Tensor::new(t.shape(), t.grad().unwrap().to_vec()).unwrap()));
                Ok((weighted(&y, &w), grads))
            },
            &inputs,
            H,
        ),
    ));

    let text: HashTextEncoder<f64> = HashTextEncoder::with_dims(16, 6, &mut r);
    let sentences: Vec<String> = vec!["walking up stairs".into(), "stairs, stairs".into(), "sitting".into()];
    let inputs: Vec<Tensor<f64>> = text.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let w = weights(&[3, 6], 8);
    out.push(op(
        "hash text encoder",
        grad_check(
            |x| {
                let mut e = text.clone();
                for ((_, p), v) in e.named_params_mut().into_iter().zip(x) {
                    p.data_mut().copy_from_slice(v.data());
                }
                let (y, cache) = e.encode(&sentences)?;
                e.backward(&cache, &w)?;
                let grads = e.named_params().into_iter().map(|(_, t)| Tensor::new(t.shape(), t.grad().unwrap().to_vec()).unwrap()).collect();
                Ok((weighted(&y, &w), grads))
            },
            &inputs,
            H,
        ),
    ));

    out.extend(loss_checks(&mut r));
    out
}

fn sim_and_back(x: &[Tensor<f64>], loss: impl Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut temp = TemperatureParam::<f64>::from_scale(1.0);
    temp.log_scale = x[2].clone();
    let (sim, cache) = similarity_matrix(&x[0], &x[1], &temp)?;
    let (l, g_c) = loss(&sim.c)?;
    let (gs, gt) = similarity_backward(&cache, &mut temp, sim.tau, &g_c)?;
    let g_log = Tensor::new(&[1], temp.log_scale.grad().unwrap().to_vec())?;
    Ok((l, vec![gs, gt, g_log]))
}

fn loss_checks(r: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = Vec::new();
    let n = 4;
    let inputs = vec![rand_t(r, &[n, 5]), rand_t(r, &[n, 5]), Tensor::new(&[1], vec![1.5]).unwrap()];
    out.push(op("clip loss", grad_check(|x| sim_and_back(x, clip_loss), &inputs, H)));
    let labels: Vec<String> = ["a", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
    let targets = unicl_target_matrix::<f64>(&labels);
    out.push(op("unicl loss", grad_check(|x| sim_and_back(x, |c| unicl_loss(c, &targets)), &inputs, H)));

    let views = vec![rand_t(r, &[n, 3]), rand_t(r, &[n, 3])];
    out.push(op(
        "nt-xent loss",
        grad_check(
            |x| {
                let o = nt_xent(&x[0], &x[1], 0.1)?;
                Ok((o.loss, vec![o.grad_z1, o.grad_z2]))
            },
            &views,
            H,
        ),
    ));

    let mut all = inputs.clone();
    all.extend(views);
    out.push(op(
        "slip loss",
        grad_check(
            |x| {
                let mut temp = TemperatureParam::<f64>::from_scale(1.0);
                temp.log_scale = x[2].clone();
                let (sim, cache) = similarity_matrix(&x[0], &x[1], &temp)?;
                let o = slip_loss(&sim.c, &x[3], &x[4], 1.0, 0.1)?;
                let (gs, gt) = similarity_backward(&cache, &mut temp, sim.tau, &o.grad_c)?;
                let g_log = Tensor::new(&[1], temp.log_scale.grad().unwrap().to_vec())?;
                Ok((o.loss, vec![gs, gt, g_log, o.grad_z1, o.grad_z2]))
            },
            &all,
            H,
        ),
    ));
    out
}

fn check_windows(n: usize, seed: u64) -> Vec<SensorWindow> {
    let mut r = rng::stream(seed, &[]);
    (0..n)
        .map(|i| SensorWindow {
            samples: (0..100).map(|_| std::array::from_fn(|_| r.random_range(-1.5..1.5))).collect(),
            label: format!("activity {i}"),
            user_id: "u00".into(),
        })
        .collect()
}

/// Sampled check of the whole model on a batch of two.
pub fn full_model_check(objective: Objective) -> Check {
    let cfg = ModelConfig { joint_dim: 16, head_hidden: 12, hash_buckets: 64, hash_dim: 10, simclr_hidden: 8, simclr_dim: 6, ..Default::default() };
    let base: NlsModel<f64> = NlsModel::new_hash(cfg, 31);
    let windows = check_windows(2, 32);
    let sentences: Vec<String> = vec!["a person walking briskly".into(), "a person sitting".into()];
    let inputs: Vec<Tensor<f64>> = base.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let f = |x: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut m = base.clone();
        m.set_params(x)?;
        m.zero_grad();
        let loss = m.batch_loss(&windows, &sentences, objective, true, true, 77)?;
        let grads = m
            .named_params()
            .into_iter()
            .map(|(_, t)| Tensor::new(t.shape(), t.grad().map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)).unwrap())
            .collect();
        Ok((loss.total, grads))
    };
    let report = grad_check_sampled(f, &inputs, H, 12, 5).unwrap();
    let name = match objective {
        Objective::Clip => "full model (clip)",
        Objective::Unicl => "full model (unicl)",
        Objective::Slip => "full model (slip)",
    };
    Check { name, max_rel_error: report.max_rel_error, tolerance: 1e-3 }
}

/// Exhaustive check of the IMU encoder alone on a short window.
pub fn imu_encoder_check() -> Check {
    let mut r = rng::stream(41, &[]);
    let enc = snls::encoders::ImuEncoder::<f64>::new(9, &mut r);
    let x = rand_t(&mut r, &[2, 3, 9]);
    let mut inputs = vec![x];
    inputs.extend(enc.named_params().into_iter().map(|(_, t)| t.clone()));
    let w = weights(&[2, 128], 9);
    let f = |x: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut e = enc.clone();
        for ((_, p), v) in e.named_params_mut().into_iter().zip(&x[1..]) {
            p.data_mut().copy_from_slice(v.data());
        }
        let (y, cache) = e.encode(&x[0], true, 3)?;
        let gx = e.backward(&cache, &w)?;
        let mut grads = vec![gx];
        grads.extend(e.named_params().into_iter().map(|(_, t)| Tensor::new(t.shape(), t.grad().unwrap().to_vec()).unwrap()));
        Ok((weighted(&y, &w), grads))
    };
    let report = grad_check_sampled(f, &inputs, H, 40, 6).unwrap();
    Check { name: "imu encoder", max_rel_error: report.max_rel_error, tolerance: 1e-4 }
}

pub fn all_checks() -> Vec<Check> {
    let mut out = op_checks();
    out.push(imu_encoder_check());
    for o in [Objective::Clip, Objective::Unicl, Objective::Slip] {
        out.push(full_model_check(o));
    }
    out
}
