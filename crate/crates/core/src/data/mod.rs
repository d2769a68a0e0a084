//! Dataset ingestion, vertical partitioning and mini-batching.

pub mod cache;
pub mod partition;
pub mod schema;
pub mod synth;
pub mod table;

pub use cache::{CachedDataset, Manifest};
pub use partition::{
    epoch_batches, sample_aligned_batches, sample_batches, vertical_partition, AlignedBatch, PartitionConfig,
    PartyView, VerticalDataset,
};
pub use schema::{FeatureSchema, FieldKind, FieldSpec, SampleId};
pub use synth::{Preset, SynthConfig, SynthData};
pub use table::{load_csv, load_csv_with, Preprocessor, ScaleStats, Table};
