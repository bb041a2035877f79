#![allow(dead_code)]

use std::collections::BTreeMap;

use dynaprop::oracle::{dense_propagation, verify_error_bound, BoundReport};
use dynaprop::{
    EventBatch, FeatureStore, FilterSchedule, GraphEvent, Matrix, Snapshot, WeightedDynamicGraph,
};
use rand::seq::IteratorRandom;
use rand::Rng;

/// Seven events over five nodes and times 1..5; edge (2, 3) appears at
/// t=2 and is deleted at t=4.
pub fn small_stream_events() -> Vec<GraphEvent> {
    vec![
        GraphEvent::add_edge(1, 0, 4, 1.0),
        GraphEvent::add_edge(1, 1, 3, 1.0),
        GraphEvent::add_edge(2, 0, 3, 1.0),
        GraphEvent::add_edge(2, 2, 3, 1.0),
        GraphEvent::add_edge(3, 2, 4, 1.0),
        GraphEvent::delete_edge(4, 2, 3, None),
        GraphEvent::add_edge(5, 0, 2, 1.0),
    ]
}

/// Weight in (0, 2].
pub fn weight<R: Rng>(rng: &mut R) -> f64 {
    2.0 - rng.gen_range(0.0..2.0)
}

pub fn random_graph<R: Rng>(rng: &mut R, n: usize, edges: usize) -> WeightedDynamicGraph {
    let mut list = Vec::new();
    if n >= 2 {
        for _ in 0..edges {
            let u = rng.gen_range(0..n as u32);
            let v = rng.gen_range(0..n as u32);
            if u != v {
                list.push((u, v, weight(rng)));
            }
        }
    }
    WeightedDynamicGraph::from_edges(n, list).unwrap()
}

/// Tracks edge weights so generated deletions are always valid.
pub struct EventGen {
    pub n: usize,
    edges: BTreeMap<(u32, u32), f64>,
    pub insert_share: f64,
}

impl EventGen {
    pub fn new(graph: &WeightedDynamicGraph) -> Self {
        EventGen {
            n: graph.node_count(),
            edges: graph.edges().map(|(u, v, w)| ((u.0, v.0), w)).collect(),
            insert_share: 0.7,
        }
    }

    /// One random event: an insertion, or a full or partial deletion of an
    /// existing edge.
    pub fn next<R: Rng>(&mut self, rng: &mut R, time: i64) -> GraphEvent {
        if self.edges.is_empty() || rng.gen_bool(self.insert_share) {
            let u = rng.gen_range(0..self.n as u32);
            let mut v = rng.gen_range(0..self.n as u32 - 1);
            if v >= u {
                v += 1;
            }
            let w = weight(rng);
            *self.edges.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
            GraphEvent::add_edge(time, u, v, w)
        } else {
            let (&(u, v), &w) = self.edges.iter().choose(rng).unwrap();
            if rng.gen_bool(0.5) {
                self.edges.remove(&(u, v));
                GraphEvent::delete_edge(time, u, v, None)
            } else {
                let part = w * rng.gen_range(0.1..0.9);
                *self.edges.get_mut(&(u, v)).unwrap() -= part;
                GraphEvent::delete_edge(time, u, v, Some(part))
            }
        }
    }

    pub fn batches<R: Rng>(&mut self, rng: &mut R, steps: usize, max_per_step: usize) -> Vec<EventBatch> {
        (1..=steps as i64)
            .map(|t| EventBatch {
                time: t,
                events: (0..rng.gen_range(1..=max_per_step)).map(|_| self.next(rng, t)).collect(),
            })
            .collect()
    }
}

pub fn snapshot_of(graph: &WeightedDynamicGraph) -> Snapshot {
    Snapshot::of_graph(graph)
}

/// Bound report of `approx` against the oracle on `graph`.
pub fn oracle_report(
    graph: &WeightedDynamicGraph,
    features: &FeatureStore,
    schedule: &FilterSchedule,
    approx: &Matrix,
) -> BoundReport {
    let n = graph.node_count();
    let x = features.to_matrix().resized(n);
    let tau = dynaprop::oracle::default_tail_tol(schedule);
    let exact = dense_propagation(graph, schedule, &x, tau).unwrap();
    verify_error_bound(approx, &exact, graph.degrees(), schedule).unwrap()
}

/// Largest `|a - b| / (2·bound(d_i))` over all entries; `<= 1` passes.
pub fn pairwise_ratio(a: &Matrix, b: &Matrix, degrees: &[f64], schedule: &FilterSchedule) -> f64 {
    let mut worst = 0.0f64;
    for (i, &d) in degrees.iter().enumerate() {
        let bound = 2.0 * schedule.error_bound(d);
        for j in 0..a.cols() {
            let err = (a.get(i, j) - b.get(i, j)).abs();
            let r = if err == 0.0 {
                0.0
            } else if bound > 0.0 {
                err / bound
            } else {
                f64::INFINITY
            };
            worst = worst.max(r);
        }
    }
    worst
}

pub fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}
