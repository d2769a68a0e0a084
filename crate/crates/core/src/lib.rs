//! Vertical federated learning with hybrid local pre-training.
//!
//! The label-owning (active) party pre-trains an encoder and prediction head
//! on all of its local samples; feature-only (passive) parties pre-train
//! their encoders with a contrastive objective on corrupted views of their
//! local features. Downstream split training on the aligned samples then
//! warm-starts passive encoders and pulls the active sub-model toward its
//! pre-trained weights with a proximal penalty.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod federated;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod ssl;
pub mod sup;

pub use error::{Error, Result};
