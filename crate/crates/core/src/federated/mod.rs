//! Downstream split training on aligned samples.
//!
//! Parties compute representations of their feature blocks and send them to
//! the server, which owns the prediction head and the labels. The server
//! returns each party the gradient of the loss w.r.t. its representation.
//! Training modes decide which pre-trained weights are used: passive
//! encoders as warm starts, and the active party's local model as an anchor
//! for a proximal penalty.

pub mod constraint;
pub mod privacy;
pub mod protocol;
pub mod train;
pub mod transport;

pub use constraint::{constraint_loss, head_slice, total_loss, Anchors, ConstraintLoss};
pub use privacy::{audit, AuditReport, ForbiddenHashes};
pub use protocol::{
    federated_predict, round_gradients, run_round, FederatedModel, PartyNode, RoundGradients, RoundStats, ServerNode,
};
pub use train::{
    build_nodes, history_jsonl, init_model, snapshot, split_aligned, train_downstream, DownstreamConfig, BestEpoch, DownstreamRun,
    EpochRecord, Pretrained, TrainMode, TrainedModel,
};
pub use transport::{Direction, LogRecord, Message, MessageKind, Transport, TransportLog};
