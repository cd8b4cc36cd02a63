mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use snls::datapipe::{apply_normalizer, fit_normalizer, make_user_folds, resample, segment, SensorSeries, SensorWindow};

fn series(len: usize, hz: f64, seed: u64) -> SensorSeries {
    let f = |c: usize| (0..len).map(|t| ((t as f64 * 0.37 + c as f64 + seed as f64).sin() * 2.0 + c as f64) as f32).collect::<Vec<_>>();
    SensorSeries::new("u", [f(0), f(1), f(2)], hz, vec!["walking".to_string(); len]).unwrap()
}

proptest! {
    #![proptest_config(common::props(96))]

    #[test]
    fn window_count_and_starts(len in 1usize..1200) {
        let s = series(len, 50.0, 1);
        let w = segment(&s, 2.0, 0.5).unwrap();
        let expected = if len >= 100 { (len - 100) / 50 + 1 } else { 0 };
        prop_assert_eq!(w.len(), expected);
        for (i, win) in w.iter().enumerate() {
            prop_assert_eq!(win.len(), 100);
            let start = i * 50;
            prop_assert_eq!(win.samples[0][0], s.channels[0][start]);
            prop_assert_eq!(start % 50, 0);
        }
    }

    #[test]
    fn folds_never_share_users(n_users in 5usize..60, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n_users >= k);
        let users: BTreeSet<String> = (0..n_users).map(|i| format!("user{i:03}")).collect();
        let plan = make_user_folds(&users, k, seed).unwrap();
        plan.audit(&users).unwrap();
        let mut tested = BTreeSet::new();
        for f in &plan.folds {
            prop_assert!(f.train_users.is_disjoint(&f.test_users));
            prop_assert!(f.train_users.is_disjoint(&f.val_users));
            prop_assert!(f.val_users.is_disjoint(&f.test_users));
            for u in &f.test_users {
                prop_assert!(tested.insert(u.clone()), "user tested twice");
            }
        }
        prop_assert_eq!(tested, users);
    }

    #[test]
    fn normalization_standardizes_fit_set(offsets in prop::array::uniform3(-50.0f64..50.0), scales in prop::array::uniform3(0.01f64..30.0), seed in 0u64..1000) {
        let windows: Vec<SensorWindow> = (0..4).map(|w| SensorWindow {
            samples: (0..100).map(|t| std::array::from_fn(|c| {
                let x = ((t * 7 + w * 31 + c * 13) as f64 + seed as f64).sin();
                (offsets[c] + scales[c] * x) as f32
            })).collect(),
            label: "a".into(),
            user_id: "u".into(),
        }).collect();
        let norm = fit_normalizer(&windows).unwrap();
        let out = apply_normalizer(&norm, &windows);
        for c in 0..3 {
            let vals: Vec<f64> = out.iter().flat_map(|w| w.channel(c)).map(f64::from).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            prop_assert!(mean.abs() <= 1e-5, "channel {} mean {}", c, mean);
            if norm.std[c] > 1e-6 {
                prop_assert!((std - 1.0).abs() <= 1e-4, "channel {} std {}", c, std);
            }
        }
    }

    #[test]
    fn resampling_preserves_duration(len in 1usize..2000, hz in 5.0f64..400.0) {
        let s = series(len, hz, 2);
        let r = resample(&s, 50.0).unwrap();
        prop_assert!((r.len() as f64 / 50.0 - len as f64 / hz).abs() <= 1.0 / 50.0);
        prop_assert_eq!(r.labels.len(), r.len());
    }
}
