mod common;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use proptest::prelude::*;
use snls::harness::{macro_f1, Aggregate, TrainConfig};
use snls::inference::{adapt_projections, class_embeddings_from_vectors, retrieve_topk, stratified_indices, zeroshot_predict, GalleryIndex};
use snls::model::{ModelConfig, NlsModel};
use snls::numerics::Tensor;
use snls::prompts::{PromptSet, SamplingPolicy, Template, PLACEHOLDER};
use snls::rng;

fn vecs(n: usize, d: usize, v: &[f64]) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..d).map(|j| v[(i * d + j) % v.len()] + ((i * d + j) as f64 * 0.77).sin()).collect()).collect()
}

proptest! {
    #![proptest_config(common::props(48))]

    #[test]
    fn render_is_injective(acts in prop::collection::btree_set("[a-z]{1,8}( [a-z]{1,8})?", 2..10)) {
        let t = Template::new("t", format!("A person is {PLACEHOLDER} right now.")).unwrap();
        let rendered: std::collections::BTreeSet<String> = acts.iter().map(|a| t.render(a).unwrap()).collect();
        prop_assert_eq!(rendered.len(), acts.len());
    }

    #[test]
    fn training_sentences_are_pure(seed in any::<u64>(), which in 0usize..2) {
        let set = PromptSet::shipped();
        let policy = [SamplingPolicy::BaseOnly, SamplingPolicy::RandomTemplate][which % 2];
        let a = set.sample_training_sentence("walking", policy, seed).unwrap();
        let b = set.sample_training_sentence("walking", policy, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zeroshot_invariances(n in 1usize..8, c in 2usize..6, v in prop::collection::vec(-1.0f64..1.0, 6..30), scales in prop::collection::vec(0.01f64..100.0, 8), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let d = 4;
        let class_vecs = vecs(c, d, &v);
        let per: IndexMap<String, Vec<Vec<f64>>> = class_vecs.iter().enumerate().map(|(i, x)| (format!("k{i}"), vec![x.clone()])).collect();
        let set = class_embeddings_from_vectors(per, Aggregate::Single, "p").unwrap();
        let w = Tensor::from_rows(&vecs(n, d, &v[2..])).unwrap();
        let base = zeroshot_predict(&w, &set).unwrap();
        let mut scaled = w.clone();
        for (i, s) in scales.iter().enumerate().take(n) {
            scaled.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        prop_assert_eq!(&zeroshot_predict(&scaled, &set).unwrap(), &base);

        let mut p: Vec<usize> = (0..c).collect();
        p.shuffle(&mut rng::stream(perm_seed, &[]));
        let per: IndexMap<String, Vec<Vec<f64>>> = p.iter().map(|&i| (format!("k{i}"), vec![class_vecs[i].clone()])).collect();
        let permuted = class_embeddings_from_vectors(per, Aggregate::Single, "p").unwrap();
        let pred = zeroshot_predict(&w, &permuted).unwrap();
        let scores = snls::inference::class_scores(&w, &set).unwrap();
        for (i, (&b, &q)) in base.iter().zip(&pred).enumerate() {
            // Equal to the original argmax, or tied with it.
            prop_assert!(p[q] == b || scores[i][p[q]] == scores[i][b]);
        }
    }

    #[test]
    fn retrieval_is_sorted_and_finds_self(n in 1usize..30, d in 1usize..6, v in prop::collection::vec(-1.0f64..1.0, 6..30), q in 0usize..30, k in 1usize..40) {
        let mut g = GalleryIndex::new(d, "p");
        let rows = vecs(n, d, &v);
        for (i, r) in rows.iter().enumerate() {
            g.push(format!("id{i:03}"), r.iter().map(|&x| x as f32).collect(), "m").unwrap();
        }
        let query: Vec<f64> = g.items()[q % n].vector.iter().map(|&x| f64::from(x)).collect();
        let top = retrieve_topk(&query, &g, k).unwrap();
        prop_assert_eq!(top.len(), k.min(n));
        prop_assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert!(top[0].1 >= 1.0 - 1e-9);
    }

    #[test]
    fn stratified_sampling_takes_exactly_k(counts in prop::collection::vec(0usize..12, 1..6), k in 1usize..10, seed in any::<u64>()) {
        let labels: Vec<String> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(format!("c{c}"), n)).collect();
        let present: Vec<usize> = counts.iter().copied().filter(|&n| n > 0).collect();
        match stratified_indices(&labels, k, &mut rng::stream(seed, &[])) {
            Some(idx) => {
                prop_assert!(present.iter().all(|&n| n >= k));
                let mut per: BTreeMap<&str, usize> = BTreeMap::new();
                for &i in &idx {
                    *per.entry(labels[i].as_str()).or_default() += 1;
                }
                prop_assert!(per.values().all(|&n| n == k));
                prop_assert_eq!(per.len(), present.len());
                let mut sorted = idx.clone();
                sorted.sort();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), idx.len());
            }
            None => prop_assert!(present.iter().any(|&n| n < k)),
        }
    }

    #[test]
    fn macro_f1_invariant_to_orderings(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let classes: Vec<String> = (0..5).map(|c| format!("c{c}")).collect();
        let preds: Vec<String> = pairs.iter().map(|p| classes[p.0].clone()).collect();
        let truths: Vec<String> = pairs.iter().map(|p| classes[p.1].clone()).collect();
        let base = macro_f1(&preds, &truths, &classes).unwrap();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[1]));
        let p2: Vec<String> = order.iter().map(|&i| preds[i].clone()).collect();
        let t2: Vec<String> = order.iter().map(|&i| truths[i].clone()).collect();
        let mut c2 = classes.clone();
        c2.shuffle(&mut rng::stream(seed, &[2]));
        let other = macro_f1(&p2, &t2, &c2).unwrap();
        prop_assert!((base.macro_f1 - other.macro_f1).abs() < 1e-12);
        for c in &classes {
            prop_assert_eq!(base.per_class[c], other.per_class[c]);
        }
    }
}

#[test]
fn shipped_templates_have_one_placeholder() {
    for t in PromptSet::shipped().templates() {
        t.validate().unwrap();
        assert_eq!(t.pattern.matches(PLACEHOLDER).count(), 1);
    }
}

#[test]
fn adaptation_leaves_frozen_parameters_untouched() {
    let ds = common::synth_dataset(4, 4, 3, 11);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        lr: 1e-2,
        unsafe_override: true,
        model: ModelConfig { joint_dim: 16, head_hidden: 16, hash_buckets: 64, hash_dim: 16, ..Default::default() },
        ..Default::default()
    };
    let mut model = NlsModel::<f32>::new_hash(cfg.model.clone(), 5);
    let frozen = |m: &NlsModel<f32>| -> Vec<(String, Vec<u8>)> {
        m.named_params()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("sensor_head.") && !n.starts_with("text_head.") && n != "temperature.log_scale")
            .map(|(n, t)| (n, t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect()
    };
    let heads = |m: &NlsModel<f32>| m.sensor_head.clone();
    let before = frozen(&model);
    let head_before = heads(&model);
    let (train, val): (Vec<_>, Vec<_>) = ds.windows.iter().cloned().partition(|w| w.user_id != "u03");
    adapt_projections(&mut model, &train, &val, &PromptSet::shipped(), &cfg).unwrap();
    assert_eq!(frozen(&model), before);
    assert_ne!(heads(&model), head_before, "heads should move");
}
