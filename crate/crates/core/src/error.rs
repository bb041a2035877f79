use std::path::PathBuf;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("node {0} is already registered")]
    NodeExists(NodeId),

    #[error("self-loop on node {0} is not supported")]
    SelfLoop(NodeId),

    #[error("edge weight must be finite and positive, got {0}")]
    InvalidWeight(f64),

    #[error("edge ({u}, {v}) does not exist")]
    MissingEdge { u: NodeId, v: NodeId },

    #[error("cannot delete weight {requested} from edge ({u}, {v}) holding {present}")]
    DeleteExceedsWeight {
        u: NodeId,
        v: NodeId,
        requested: f64,
        present: f64,
    },

    #[error("diff does not match the graph at edge ({u}, {v}): expected weight {expected}, found {found}")]
    StaleDiff {
        u: NodeId,
        v: NodeId,
        expected: f64,
        found: f64,
    },

    #[error("invalid filter schedule: {0}")]
    InvalidSchedule(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("cannot push node {0}: weighted degree is zero")]
    ZeroDegreePush(NodeId),

    #[error("node {node} has estimate {estimate} but previous degree {degree}")]
    DetachedEstimate {
        node: NodeId,
        estimate: f64,
        degree: f64,
    },

    #[error("diff lists neighbor {0} that is not itself affected")]
    AsymmetricDiff(NodeId),

    #[error("feature store has {rows} rows, node {node} needs a row")]
    MissingFeatureRow { node: NodeId, rows: usize },

    #[error("time regression: {next} follows {prev}")]
    TimeRegression { prev: i64, next: i64 },

    #[error("{0}")]
    Timeline(String),

    #[error("dense oracle limited to {limit} nodes, graph has {nodes}")]
    OracleTooLarge { nodes: usize, limit: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("malformed embedding file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
