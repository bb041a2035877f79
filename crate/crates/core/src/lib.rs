//! Streaming graph-filter propagation over dynamic graphs.
//!
//! Each feature column is propagated independently by weighted forward push,
//! keeping an estimate/residual pair per node. When the graph changes, only
//! the affected nodes are patched so the pair stays consistent with the new
//! graph, and pushing resumes from there. Converged estimates are within
//! [`FilterSchedule::error_bound`] of the exact filter output at every node.

pub mod diff;
pub mod engine;
pub mod error;
pub mod export;
pub mod features;
pub mod graph;
pub mod incremental;
pub mod io;
pub mod matrix;
pub mod oracle;
pub mod push;
pub mod schedule;

pub use diff::{diff_snapshots, EdgeChange, NodeChange, Snapshot, SnapshotDiff};
pub use engine::{
    concat_filters, delta_sequence, group_events, run_timeline, run_timeline_observed, Checkpoint,
    CheckpointPolicy, ColumnReport, DeltaSequence, EmbeddingTimeline, EngineConfig, EventBatch, RunReport,
    ScheduleTag, Stream, TimelineRun, UpdateMode,
};
pub use error::{Error, Result};
pub use export::{export_timeline, import_timeline, ExportFormat, Precision};
pub use features::FeatureStore;
pub use graph::{EventKind, GraphEvent, NodeId, WeightedDynamicGraph};
pub use matrix::Matrix;
pub use push::{init_state, verify_invariant, ConvergenceReport, FrontierOrder, PropagationState};
pub use schedule::{FilterKind, FilterSchedule};
