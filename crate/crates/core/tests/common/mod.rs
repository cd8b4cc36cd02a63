#![allow(dead_code)]

pub mod gradients;

use snls::datapipe::{synth_generate, Dataset, SynthSpec};

pub fn synth_dataset(classes: usize, users: usize, per_user: usize, seed: u64) -> Dataset {
    Dataset::from_series(&synth_generate(&SynthSpec::new(classes, users, per_user, seed)).unwrap()).unwrap()
}

/// Fixed-seed proptest settings so property runs are reproducible.
pub fn props(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config { cases, rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed), failure_persistence: None, ..Default::default() }
}
