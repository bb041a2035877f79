//! Mutable weighted undirected graph with cached weighted degrees.
//!
//! Every mutation goes through [`WeightedDynamicGraph::apply_diff`]: single
//! events and timestamp batches are first planned into a [`SnapshotDiff`]
//! against the current state, then applied. The diff carries the exact
//! before/after weighted degree of every affected node, which is what the
//! incremental maintenance code consumes.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;

use crate::diff::{EdgeChange, Snapshot, SnapshotDiff};
use crate::error::{Error, Result};

/// Dense node index. Ids are contiguous `0..n` and never reused.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Self {
        NodeId(u32::try_from(i).expect("node index exceeds u32"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

/// Canonical undirected edge key, smaller endpoint first.
#[inline]
pub fn edge_key(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    /// Adds `weight` to edge `(u, v)`, creating it if absent.
    AddEdge { u: NodeId, v: NodeId, weight: f64 },
    /// Removes `weight` from edge `(u, v)`; `None` removes the whole edge.
    DeleteEdge {
        u: NodeId,
        v: NodeId,
        weight: Option<f64>,
    },
    /// Registers every id up to and including `node`. Its feature row is
    /// looked up by id in the feature store.
    AddNode { node: NodeId },
    /// Deletes all incident edges; the node stays registered.
    DeleteNode { node: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEvent {
    pub time: i64,
    pub kind: EventKind,
}

impl GraphEvent {
    pub fn add_edge(time: i64, u: u32, v: u32, weight: f64) -> Self {
        GraphEvent {
            time,
            kind: EventKind::AddEdge {
                u: NodeId(u),
                v: NodeId(v),
                weight,
            },
        }
    }

    pub fn delete_edge(time: i64, u: u32, v: u32, weight: Option<f64>) -> Self {
        GraphEvent {
            time,
            kind: EventKind::DeleteEdge {
                u: NodeId(u),
                v: NodeId(v),
                weight,
            },
        }
    }

    /// Highest node id this event references.
    pub fn max_node(&self) -> NodeId {
        match self.kind {
            EventKind::AddEdge { u, v, .. } | EventKind::DeleteEdge { u, v, .. } => u.max(v),
            EventKind::AddNode { node } | EventKind::DeleteNode { node } => node,
        }
    }
}

/// Relative slack below which a partially deleted edge counts as gone.
const DELETE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct WeightedDynamicGraph {
    adjacency: Vec<IndexMap<NodeId, f64>>,
    degree: Vec<f64>,
    edge_count: usize,
    powers: Option<PowerCache>,
}

#[derive(Clone, Debug)]
struct PowerCache {
    beta: f64,
    pow_beta: Vec<f64>,
    pow_comp: Vec<f64>,
}

impl PowerCache {
    fn refresh(&mut self, i: usize, d: f64) {
        self.pow_beta[i] = d.powf(self.beta);
        self.pow_comp[i] = d.powf(1.0 - self.beta);
    }
}

/// `d(i)^β` and `d(i)^(1-β)` lookups, cached when the graph was told the
/// exponent in advance.
#[derive(Clone, Copy)]
pub enum DegreePowers<'a> {
    Cached { pow_beta: &'a [f64], pow_comp: &'a [f64] },
    Direct { degree: &'a [f64], beta: f64 },
}

impl DegreePowers<'_> {
    #[inline]
    pub fn beta(&self, i: usize) -> f64 {
        match self {
            DegreePowers::Cached { pow_beta, .. } => pow_beta[i],
            DegreePowers::Direct { degree, beta } => degree[i].powf(*beta),
        }
    }

    #[inline]
    pub fn comp(&self, i: usize) -> f64 {
        match self {
            DegreePowers::Cached { pow_comp, .. } => pow_comp[i],
            DegreePowers::Direct { degree, beta } => degree[i].powf(1.0 - *beta),
        }
    }
}

impl PartialEq for WeightedDynamicGraph {
    fn eq(&self, other: &Self) -> bool {
        self.adjacency == other.adjacency
            && self.degree == other.degree
            && self.edge_count == other.edge_count
    }
}

impl WeightedDynamicGraph {
    pub fn new(node_count: usize) -> Self {
        let mut g = WeightedDynamicGraph::default();
        g.ensure_nodes(node_count);
        g
    }

    /// Builds a graph from an undirected edge list. Repeated edges accumulate.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, f64)>,
    {
        let mut g = WeightedDynamicGraph::new(node_count);
        let events: Vec<_> = edges
            .into_iter()
            .map(|(u, v, w)| GraphEvent::add_edge(0, u, v, w))
            .collect();
        if let Some(max) = events.iter().map(|e| e.max_node()).max() {
            g.ensure_nodes(max.index() + 1);
        }
        let diff = g.plan_events(&events)?;
        g.apply_diff(&diff)?;
        Ok(g)
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        let mut g = WeightedDynamicGraph::new(snapshot.node_count());
        let diff = g.diff_snapshot(snapshot);
        g.apply_diff(&diff).expect("diff planned against this graph");
        g
    }

    /// Caches `d^β` and `d^(1-β)` for every node, kept current on mutation.
    pub fn cache_degree_powers(&mut self, beta: f64) {
        let mut cache = PowerCache {
            beta,
            pow_beta: vec![0.0; self.node_count()],
            pow_comp: vec![0.0; self.node_count()],
        };
        for (i, &d) in self.degree.iter().enumerate() {
            cache.refresh(i, d);
        }
        self.powers = Some(cache);
    }

    pub fn degree_powers(&self, beta: f64) -> DegreePowers<'_> {
        match &self.powers {
            Some(c) if c.beta == beta => DegreePowers::Cached {
                pow_beta: &c.pow_beta,
                pow_comp: &c.pow_comp,
            },
            _ => DegreePowers::Direct {
                degree: &self.degree,
                beta,
            },
        }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    #[inline]
    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.node_count()
    }

    /// Registers nodes so that ids `0..n` exist. Returns the first new id.
    pub fn ensure_nodes(&mut self, n: usize) -> NodeId {
        let first = NodeId::from_index(self.node_count());
        while self.adjacency.len() < n {
            self.adjacency.push(IndexMap::new());
            self.degree.push(0.0);
            if let Some(c) = self.powers.as_mut() {
                c.pow_beta.push(0.0f64.powf(c.beta));
                c.pow_comp.push(0.0f64.powf(1.0 - c.beta));
            }
        }
        first
    }

    pub fn add_node(&mut self) -> NodeId {
        let n = self.node_count();
        self.ensure_nodes(n + 1)
    }

    fn check(&self, node: NodeId) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    /// Cached weighted degree; panics on unknown nodes.
    #[inline]
    pub fn degree(&self, node: NodeId) -> f64 {
        self.degree[node.index()]
    }

    pub fn weighted_degree(&self, node: NodeId) -> Result<f64> {
        self.check(node)?;
        Ok(self.degree(node))
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degree
    }

    /// Degree recomputed by summing the adjacency row.
    pub fn recomputed_degree(&self, node: NodeId) -> f64 {
        self.adjacency[node.index()].values().sum()
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> f64 {
        self.adjacency
            .get(u.index())
            .and_then(|row| row.get(&v))
            .copied()
            .unwrap_or(0.0)
    }

    #[inline]
    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjacency[node.index()].iter().map(|(&v, &w)| (v, w))
    }

    pub fn neighbor_count(&self, node: NodeId) -> usize {
        self.adjacency[node.index()].len()
    }

    /// Every edge once, smaller endpoint first, in node order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, row)| {
            let u = NodeId::from_index(u);
            row.iter()
                .filter(move |(&v, _)| u < v)
                .map(move |(&v, &w)| (u, v, w))
        })
    }

    /// Applies one event and returns the diff describing exactly that event.
    pub fn apply_event(&mut self, event: &GraphEvent) -> Result<SnapshotDiff> {
        let diff = self.plan_events(std::slice::from_ref(event))?;
        self.apply_diff(&diff)?;
        Ok(diff)
    }

    /// Applies a group of events as one step and returns their net diff.
    pub fn apply_events(&mut self, events: &[GraphEvent]) -> Result<SnapshotDiff> {
        let diff = self.plan_events(events)?;
        self.apply_diff(&diff)?;
        Ok(diff)
    }

    /// Validates `events` in order against the current graph without
    /// mutating it, and returns their net effect.
    pub fn plan_events(&self, events: &[GraphEvent]) -> Result<SnapshotDiff> {
        let mut overlay: BTreeMap<(NodeId, NodeId), EdgeChange> = BTreeMap::new();
        let mut nodes = self.node_count();
        let current = |overlay: &BTreeMap<_, EdgeChange>, key: (NodeId, NodeId)| {
            overlay
                .get(&key)
                .map(|c| c.after)
                .unwrap_or_else(|| self.weight(key.0, key.1))
        };
        for event in events {
            match event.kind {
                EventKind::AddEdge { u, v, weight } => {
                    check_known(u, nodes)?;
                    check_known(v, nodes)?;
                    if u == v {
                        return Err(Error::SelfLoop(u));
                    }
                    if !(weight.is_finite() && weight > 0.0) {
                        return Err(Error::InvalidWeight(weight));
                    }
                    let key = edge_key(u, v);
                    let now = current(&overlay, key);
                    overlay
                        .entry(key)
                        .or_insert(EdgeChange {
                            before: now,
                            after: now,
                        })
                        .after = now + weight;
                }
                EventKind::DeleteEdge { u, v, weight } => {
                    check_known(u, nodes)?;
                    check_known(v, nodes)?;
                    let key = edge_key(u, v);
                    let now = current(&overlay, key);
                    if now == 0.0 {
                        return Err(Error::MissingEdge { u, v });
                    }
                    let after = match weight {
                        None => 0.0,
                        Some(w) if !(w.is_finite() && w > 0.0) => {
                            return Err(Error::InvalidWeight(w))
                        }
                        Some(w) if w > now * (1.0 + DELETE_SLACK) => {
                            return Err(Error::DeleteExceedsWeight {
                                u,
                                v,
                                requested: w,
                                present: now,
                            })
                        }
                        Some(w) => {
                            let rest = now - w;
                            if rest <= now * DELETE_SLACK {
                                0.0
                            } else {
                                rest
                            }
                        }
                    };
                    overlay
                        .entry(key)
                        .or_insert(EdgeChange {
                            before: now,
                            after: now,
                        })
                        .after = after;
                }
                EventKind::AddNode { node } => {
                    if node.index() < nodes {
                        return Err(Error::NodeExists(node));
                    }
                    nodes = node.index() + 1;
                }
                EventKind::DeleteNode { node } => {
                    check_known(node, nodes)?;
                    let mut incident: Vec<(NodeId, NodeId)> = Vec::new();
                    if self.contains(node) {
                        incident.extend(self.neighbors(node).map(|(v, _)| edge_key(node, v)));
                    }
                    incident.extend(
                        overlay
                            .keys()
                            .filter(|(a, b)| *a == node || *b == node)
                            .copied(),
                    );
                    for key in incident {
                        let now = current(&overlay, key);
                        overlay
                            .entry(key)
                            .or_insert(EdgeChange {
                                before: now,
                                after: now,
                            })
                            .after = 0.0;
                    }
                }
            }
        }
        Ok(SnapshotDiff::plan(self, overlay, nodes))
    }

    /// Diff from this graph to `next`.
    pub fn diff_snapshot(&self, next: &Snapshot) -> SnapshotDiff {
        let mut changes: BTreeMap<(NodeId, NodeId), EdgeChange> = BTreeMap::new();
        for (u, v, w) in self.edges() {
            let after = next.weight(u, v);
            if after != w {
                changes.insert((u, v), EdgeChange { before: w, after });
            }
        }
        for (&(u, v), &w) in next.edges() {
            let before = self.weight(u, v);
            if before == 0.0 {
                changes.insert((u, v), EdgeChange { before, after: w });
            }
        }
        let nodes = self.node_count().max(next.node_count());
        SnapshotDiff::plan(self, changes, nodes)
    }

    /// Applies a diff planned against the current state. Weights and
    /// degrees are set to the diff's `after` values, so replay is exact.
    pub fn apply_diff(&mut self, diff: &SnapshotDiff) -> Result<()> {
        for (&(u, v), change) in diff.edge_changes() {
            let found = self.weight(u, v);
            if found != change.before {
                return Err(Error::StaleDiff {
                    u,
                    v,
                    expected: change.before,
                    found,
                });
            }
        }
        self.ensure_nodes(diff.node_count_after());
        for (&(u, v), change) in diff.edge_changes() {
            match (change.before > 0.0, change.after > 0.0) {
                (false, true) => self.edge_count += 1,
                (true, false) => self.edge_count -= 1,
                _ => {}
            }
            for (a, b) in [(u, v), (v, u)] {
                let row = &mut self.adjacency[a.index()];
                if change.after > 0.0 {
                    row.insert(b, change.after);
                } else {
                    row.swap_remove(&b);
                }
            }
        }
        for node in diff.nodes() {
            let i = node.node.index();
            self.degree[i] = node.degree_after;
            if let Some(c) = self.powers.as_mut() {
                c.refresh(i, node.degree_after);
            }
        }
        Ok(())
    }
}

fn check_known(node: NodeId, nodes: usize) -> Result<()> {
    if node.index() < nodes {
        Ok(())
    } else {
        Err(Error::UnknownNode(node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    #[test]
    fn add_edge_on_empty_graph() {
        let mut g = WeightedDynamicGraph::new(2);
        let diff = g.apply_event(&GraphEvent::add_edge(1, 0, 1, 1.0)).unwrap();
        assert_eq!(diff.affected().collect::<Vec<_>>(), vec![n(0), n(1)]);
        assert_eq!(diff.added(n(0)), &[(n(1), 1.0)]);
        assert_eq!(diff.added(n(1)), &[(n(0), 1.0)]);
        assert_eq!(diff.degree_delta(n(0)), 1.0);
        assert_eq!(g.degree(n(0)), 1.0);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn repeated_edge_accumulates_weight() {
        let mut g = WeightedDynamicGraph::from_edges(2, [(0, 1, 1.0)]).unwrap();
        let diff = g.apply_event(&GraphEvent::add_edge(1, 0, 1, 1.0)).unwrap();
        assert_eq!(g.weight(n(0), n(1)), 2.0);
        assert_eq!(diff.degree_delta(n(0)), 1.0);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn full_delete_isolates_node() {
        let mut g = WeightedDynamicGraph::from_edges(2, [(0, 1, 2.0)]).unwrap();
        let diff = g
            .apply_event(&GraphEvent::delete_edge(1, 0, 1, Some(2.0)))
            .unwrap();
        assert_eq!(g.weight(n(0), n(1)), 0.0);
        assert_eq!(g.degree(n(0)), 0.0);
        assert_eq!(g.recomputed_degree(n(0)), 0.0);
        assert_eq!(diff.degree_delta(n(0)), -2.0);
        assert_eq!(diff.removed(n(0)), &[(n(1), 2.0)]);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn delete_errors() {
        let mut g = WeightedDynamicGraph::from_edges(3, [(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            g.apply_event(&GraphEvent::delete_edge(1, 0, 2, Some(1.0))),
            Err(Error::MissingEdge { .. })
        ));
        assert!(matches!(
            g.apply_event(&GraphEvent::delete_edge(1, 0, 1, Some(1.5))),
            Err(Error::DeleteExceedsWeight { .. })
        ));
        assert!(matches!(
            g.apply_event(&GraphEvent::add_edge(1, 0, 7, 1.0)),
            Err(Error::UnknownNode(NodeId(7)))
        ));
        assert!(matches!(
            g.apply_event(&GraphEvent::add_edge(1, 2, 2, 1.0)),
            Err(Error::SelfLoop(_))
        ));
        // failed events leave the graph untouched
        assert_eq!(g.weight(n(0), n(1)), 1.0);
    }

    #[test]
    fn weighted_degree_examples() {
        let g = WeightedDynamicGraph::from_edges(5, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)])
            .unwrap();
        assert_eq!(g.weighted_degree(n(4)).unwrap(), 0.0);
        assert_eq!(g.weighted_degree(n(0)).unwrap(), 3.0);
        let g = WeightedDynamicGraph::from_edges(3, [(0, 1, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(g.weighted_degree(n(0)).unwrap(), 2.5);
        assert!(matches!(g.weighted_degree(n(9)), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn delete_node_removes_incident_edges() {
        let mut g =
            WeightedDynamicGraph::from_edges(4, [(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let diff = g
            .apply_event(&GraphEvent {
                time: 1,
                kind: EventKind::DeleteNode { node: n(0) },
            })
            .unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.degree(n(0)), 0.0);
        assert_eq!(g.degree(n(2)), 1.0);
        assert_eq!(diff.affected().count(), 3);
    }

    #[test]
    fn batch_add_then_delete_nets_out() {
        let mut g = WeightedDynamicGraph::from_edges(3, [(0, 1, 1.0)]).unwrap();
        let diff = g
            .apply_events(&[
                GraphEvent::add_edge(1, 1, 2, 1.0),
                GraphEvent::delete_edge(1, 1, 2, None),
            ])
            .unwrap();
        assert!(diff.is_empty());
    }

    #[test]
    fn add_node_registers_ids() {
        let mut g = WeightedDynamicGraph::new(2);
        let diff = g
            .apply_event(&GraphEvent {
                time: 0,
                kind: EventKind::AddNode { node: n(3) },
            })
            .unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(diff.node_count_after(), 4);
        assert!(matches!(
            g.apply_event(&GraphEvent {
                time: 0,
                kind: EventKind::AddNode { node: n(1) },
            }),
            Err(Error::NodeExists(_))
        ));
    }

    #[test]
    fn power_cache_tracks_mutation() {
        let mut g = WeightedDynamicGraph::from_edges(3, [(0, 1, 1.0)]).unwrap();
        g.cache_degree_powers(0.5);
        g.apply_event(&GraphEvent::add_edge(1, 0, 2, 3.0)).unwrap();
        let p = g.degree_powers(0.5);
        assert_eq!(p.beta(0), 4.0f64.sqrt());
        assert_eq!(p.comp(2), 3.0f64.sqrt());
        assert_eq!(g.degree_powers(0.25).beta(0), 4.0f64.powf(0.25));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Add(u32, u32, u32),
        Del(u32, u32, u32),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u32..12, 0u32..12, 1u32..16).prop_map(|(u, v, w)| Op::Add(u, v, w)),
            (0u32..12, 0u32..12, 1u32..16).prop_map(|(u, v, w)| Op::Del(u, v, w)),
        ]
    }

    proptest! {
        // eighths are exact in binary, so cached degrees must match bit-for-bit
        #[test]
        fn degree_cache_matches_adjacency(ops in prop::collection::vec(op(), 0..80)) {
            let mut g = WeightedDynamicGraph::new(12);
            for op in ops {
                let ev = match op {
                    Op::Add(u, v, w) => GraphEvent::add_edge(0, u, v, w as f64 / 8.0),
                    Op::Del(u, v, w) => GraphEvent::delete_edge(0, u, v, Some(w as f64 / 8.0)),
                };
                let _ = g.apply_event(&ev);
            }
            for i in 0..12 {
                prop_assert_eq!(g.degree(n(i)), g.recomputed_degree(n(i)));
                for (j, w) in g.neighbors(n(i)) {
                    prop_assert!(w > 0.0);
                    prop_assert_eq!(g.weight(j, n(i)), w);
                }
            }
        }

        #[test]
        fn add_then_delete_restores_adjacency(
            edges in prop::collection::vec((0u32..10, 0u32..10, 1u32..16), 0..30),
            (u, v, w) in (0u32..10, 0u32..10, 1u32..16),
        ) {
            prop_assume!(u != v);
            let edges = edges.into_iter().filter(|(a, b, _)| a != b).map(|(a, b, w)| (a, b, w as f64 / 4.0));
            let mut g = WeightedDynamicGraph::from_edges(10, edges).unwrap();
            let original = g.clone();
            g.apply_event(&GraphEvent::add_edge(1, u, v, w as f64 / 4.0)).unwrap();
            g.apply_event(&GraphEvent::delete_edge(2, u, v, Some(w as f64 / 4.0))).unwrap();
            prop_assert_eq!(g, original);
        }
    }
}
