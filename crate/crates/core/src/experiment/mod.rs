//! Experiment harness: run configuration, the per-seed pipeline, result
//! tables and the command entry points used by the binary.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod results;

pub use commands::{cmd_eval, cmd_grid, cmd_prepare, cmd_pretrain, cmd_train, EvalRecord, Selection};
pub use config::{
    CsvSection, DatasetSection, DownstreamSection, EncoderSection, ModelSection, PartitionSection, PretrainSection,
    RunConfig, SyntheticSection, Variant, OUT_ENV,
};
pub use pipeline::{CellKey, CellResult, Layout};
pub use results::{CellStat, ResultTable, TableRow, VERSION};
