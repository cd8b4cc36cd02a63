mod common;

use proptest::prelude::*;
use snls::datapipe::SensorWindow;
use snls::encoders::{bucket, fnv1a64, tokenize, windows_to_tensor, ImuEncoder, SensorEncoder, HASH_BUCKETS, JOINT_DIM};
use snls::model::{ModelConfig, NlsModel};
use snls::numerics::Tensor;
use snls::objectives::{clip_loss, similarity_matrix, unicl_loss, unicl_target_matrix, TemperatureParam};
use snls::rng;

fn windows(n: usize, seed: u64) -> Vec<SensorWindow> {
    (0..n)
        .map(|i| SensorWindow {
            samples: (0..100).map(|t| std::array::from_fn(|c| ((t as f64 * 0.21 * (c + 1) as f64 + i as f64 + seed as f64).sin()) as f32)).collect(),
            label: format!("c{i}"),
            user_id: "u".into(),
        })
        .collect()
}

fn matrix(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |i| v[i % v.len()] + (i as f64 * 0.61).sin())
}

proptest! {
    #![proptest_config(common::props(24))]

    #[test]
    fn inference_is_pure(seed in any::<u64>(), b in 1usize..5) {
        let enc = ImuEncoder::<f32>::new(100, &mut rng::stream(seed, &[]));
        let x = windows_to_tensor(&windows(b, seed % 17)).unwrap();
        let (a, _) = enc.encode(&x, false, 1).unwrap();
        let (c, _) = enc.encode(&x, false, 999).unwrap();
        prop_assert_eq!(a.data(), c.data());
    }

    #[test]
    fn joint_embedding_shape(b in 1usize..7) {
        let model = NlsModel::<f32>::new_hash(ModelConfig { hash_buckets: 64, hash_dim: 16, ..Default::default() }, 3);
        let e = model.embed_windows(&windows(b, 1)).unwrap();
        prop_assert_eq!(e.shape(), &[b, JOINT_DIM][..]);
    }

    #[test]
    fn similarity_ignores_row_scale(n in 2usize..6, d in 2usize..6, v in prop::collection::vec(-2.0f64..2.0, 4..20), row in 0usize..6, scale in 1e-3f64..1e3) {
        let s = matrix(n, d, &v);
        let t = matrix(n, d, &v[1..]);
        let temp = TemperatureParam::<f64>::new();
        let (base, _) = similarity_matrix(&s, &t, &temp).unwrap();
        let mut scaled = s.clone();
        scaled.row_mut(row % n).iter_mut().for_each(|x| *x *= scale);
        let (c2, _) = similarity_matrix(&scaled, &t, &temp).unwrap();
        for (a, b) in base.c.data().iter().zip(c2.c.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn clip_is_pair_relabeling_symmetric(n in 2usize..7, v in prop::collection::vec(-5.0f64..5.0, 4..40), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let c = matrix(n, n, &v);
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng::stream(perm_seed, &[]));
        let pc = Tensor::from_fn(&[n, n], |k| c.data()[p[k / n] * n + p[k % n]]);
        let (a, _) = clip_loss(&c).unwrap();
        let (b, _) = clip_loss(&pc).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn unicl_matches_clip_for_distinct_labels(n in 2usize..9, v in prop::collection::vec(-5.0f64..5.0, 4..40)) {
        let c = matrix(n, n, &v);
        let labels: Vec<String> = (0..n).map(|i| format!("label{i}")).collect();
        let (a, ga) = clip_loss(&c).unwrap();
        let (b, gb) = unicl_loss(&c, &unicl_target_matrix(&labels)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ga.data(), gb.data());
    }

    #[test]
    fn temperature_never_exceeds_clamp(steps in prop::collection::vec(0.0f64..50.0, 1..30)) {
        let mut t = TemperatureParam::<f64>::new();
        for s in steps {
            t.log_scale.data_mut()[0] += s;
            prop_assert!(t.applied() <= 100.0 + 1e-9);
            t.clamp_stored();
            prop_assert!(t.applied() <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn tokens_bucket_by_fnv(s in "[a-zA-Z0-9 ,.]{0,40}") {
        for tok in tokenize(&s) {
            prop_assert_eq!(bucket(&tok, HASH_BUCKETS) as u64, fnv1a64(tok.as_bytes()) % 4096);
        }
    }
}

#[test]
fn hash_buckets_match_reference_values() {
    // Reference digests from an independent FNV-1a implementation.
    assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(fnv1a64(b"walking"), 0x67b1_cc7a_00ee_9a98);
    assert_eq!(bucket("walking", 4096), 2712);
    assert_eq!(bucket("person", 4096), 480);
    assert_eq!(bucket("accelerometer", 4096), 1098);
    assert_eq!(bucket("a", 4096), 3212);
}
