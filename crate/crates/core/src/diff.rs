//! Snapshots and the per-node diffs between consecutive graph states.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{edge_key, NodeId, WeightedDynamicGraph};

/// Weight of one undirected edge before and after a change; 0 means absent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeChange {
    pub before: f64,
    pub after: f64,
}

/// Everything the incremental update needs to know about one affected node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeChange {
    pub node: NodeId,
    pub degree_before: f64,
    pub degree_after: f64,
    /// Neighbor and the weight gained on that edge.
    pub added: Vec<(NodeId, f64)>,
    /// Neighbor and the weight lost on that edge.
    pub removed: Vec<(NodeId, f64)>,
}

impl NodeChange {
    pub fn degree_delta(&self) -> f64 {
        self.added.iter().map(|(_, w)| w).sum::<f64>() - self.removed.iter().map(|(_, w)| w).sum::<f64>()
    }
}

/// Net change between two graph states.
///
/// Edge changes are keyed by `(min, max)` endpoint. Affected nodes are kept
/// sorted by id; a node is affected iff at least one incident edge weight
/// changed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotDiff {
    edges: BTreeMap<(NodeId, NodeId), EdgeChange>,
    nodes: Vec<NodeChange>,
    node_count_before: usize,
    node_count_after: usize,
}

impl SnapshotDiff {
    /// Builds the diff of `changes` against `graph`, recording exact
    /// before/after weighted degrees for every affected node.
    pub(crate) fn plan(
        graph: &WeightedDynamicGraph,
        mut changes: BTreeMap<(NodeId, NodeId), EdgeChange>,
        node_count_after: usize,
    ) -> Self {
        changes.retain(|_, c| c.before != c.after);

        #[derive(Default)]
        struct Acc {
            degree: f64,
            links: isize,
            added: Vec<(NodeId, f64)>,
            removed: Vec<(NodeId, f64)>,
        }
        let mut acc: BTreeMap<NodeId, Acc> = BTreeMap::new();
        for (&(u, v), c) in &changes {
            let delta = c.after - c.before;
            let links = match (c.before > 0.0, c.after > 0.0) {
                (false, true) => 1,
                (true, false) => -1,
                _ => 0,
            };
            for (a, b) in [(u, v), (v, u)] {
                let entry = acc.entry(a).or_insert_with(|| Acc {
                    degree: if graph.contains(a) { graph.degree(a) } else { 0.0 },
                    links: if graph.contains(a) {
                        graph.neighbor_count(a) as isize
                    } else {
                        0
                    },
                    ..Acc::default()
                });
                entry.degree += delta;
                entry.links += links;
                if delta > 0.0 {
                    entry.added.push((b, delta));
                } else {
                    entry.removed.push((b, -delta));
                }
            }
        }
        let nodes = acc
            .into_iter()
            .map(|(node, a)| {
                let degree_before = if graph.contains(node) {
                    graph.degree(node)
                } else {
                    0.0
                };
                NodeChange {
                    node,
                    degree_before,
                    // isolation is decided by link count, so an emptied row
                    // has degree exactly 0 regardless of rounding
                    degree_after: if a.links == 0 { 0.0 } else { a.degree },
                    added: a.added,
                    removed: a.removed,
                }
            })
            .collect();
        SnapshotDiff {
            edges: changes,
            nodes,
            node_count_before: graph.node_count(),
            node_count_after: node_count_after.max(graph.node_count()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.node_count_before == self.node_count_after
    }

    pub fn edge_changes(&self) -> &BTreeMap<(NodeId, NodeId), EdgeChange> {
        &self.edges
    }

    pub fn nodes(&self) -> &[NodeChange] {
        &self.nodes
    }

    pub fn node(&self, u: NodeId) -> Option<&NodeChange> {
        self.position(u).map(|k| &self.nodes[k])
    }

    pub fn position(&self, u: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&u, |c| c.node).ok()
    }

    /// The affected node set, ascending.
    pub fn affected(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|c| c.node)
    }

    pub fn added(&self, u: NodeId) -> &[(NodeId, f64)] {
        self.node(u).map(|c| c.added.as_slice()).unwrap_or(&[])
    }

    pub fn removed(&self, u: NodeId) -> &[(NodeId, f64)] {
        self.node(u).map(|c| c.removed.as_slice()).unwrap_or(&[])
    }

    pub fn degree_delta(&self, u: NodeId) -> f64 {
        self.node(u).map(NodeChange::degree_delta).unwrap_or(0.0)
    }

    pub fn node_count_before(&self) -> usize {
        self.node_count_before
    }

    pub fn node_count_after(&self) -> usize {
        self.node_count_after
    }
}

/// A full graph state given as an undirected weighted edge list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    node_count: usize,
    edges: BTreeMap<(NodeId, NodeId), f64>,
}

impl Snapshot {
    /// Repeated edges accumulate weight. `node_count` is raised to cover
    /// every endpoint.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, f64)>,
    {
        let mut s = Snapshot {
            node_count,
            edges: BTreeMap::new(),
        };
        for (u, v, w) in edges {
            s.insert(NodeId(u), NodeId(v), w)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, u: NodeId, v: NodeId, weight: f64) -> Result<()> {
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidWeight(weight));
        }
        *self.edges.entry(edge_key(u, v)).or_insert(0.0) += weight;
        self.node_count = self.node_count.max(u.max(v).index() + 1);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn with_node_count(mut self, n: usize) -> Self {
        self.node_count = self.node_count.max(n);
        self
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &f64)> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> f64 {
        self.edges.get(&edge_key(u, v)).copied().unwrap_or(0.0)
    }

    pub fn of_graph(graph: &WeightedDynamicGraph) -> Self {
        Snapshot {
            node_count: graph.node_count(),
            edges: graph.edges().map(|(u, v, w)| ((u, v), w)).collect(),
        }
    }
}

/// Diff turning `prev` into `next`; `next` may register additional nodes.
pub fn diff_snapshots(prev: &WeightedDynamicGraph, next: &Snapshot) -> SnapshotDiff {
    prev.diff_snapshot(next)
}
