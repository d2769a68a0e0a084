//! Small dense-network engine with exact reverse-mode gradients.
//!
//! Only the fixed topology used by the pipeline is supported: categorical
//! embeddings feeding an MLP. All arithmetic is `f64`.

pub mod checkpoint;
pub mod dense;
pub mod embedding;
pub mod encoder;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod params;

pub use checkpoint::{Checkpoint, TensorRecord};
pub use dense::{Activation, DenseLayer, Mlp, MlpTape};
pub use embedding::EmbeddingTable;
pub use encoder::{Encoder, EncoderSpec, EncoderTape, FeatureBatch, GradBundle};
pub use gradcheck::{grad_check, max_relative_error, numeric_gradient};
pub use loss::{bce_with_logits, sigmoid};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind};
pub use params::ParamSet;
