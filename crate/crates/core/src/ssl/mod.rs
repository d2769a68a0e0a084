//! Contrastive self-supervised pre-training for passive parties.
//!
//! Each sample is paired with a corrupted view in which a random subset of
//! its fields is resampled from the empirical marginals; an encoder plus a
//! projection head is trained so that a sample's two views are more similar
//! (by cosine) than views of different samples.

pub mod contrastive;
pub mod corrupt;
pub mod pretrain;

pub use contrastive::{contrastive_loss, cosine_similarity_matrix, info_nce, ContrastiveBatchResult};
pub use corrupt::{CorruptionModel, Marginal};
pub use pretrain::{pretrain_passive, PassivePretrained, ProjectionHead, SslConfig};
