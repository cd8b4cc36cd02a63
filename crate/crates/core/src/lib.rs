//! Contrastive sensor-language pre-training for wearable activity recognition.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datapipe;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod prompts;
pub mod rng;

pub use error::{Error, Result};
