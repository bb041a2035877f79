//! Weighted forward push with signed residuals.
//!
//! For one feature column `x`, a [`PropagationState`] holds an estimate `π̂`
//! and residual `r` that satisfy, at every node `i`,
//!
//! ```text
//! π̂(i) + γ₀·r(i) = γ₀·x(i) + Σ_j γ·w(i,j)·π̂(j) / (d(i)^β · d(j)^(1-β))
//! ```
//!
//! Pushing node `i` moves `γ₀·r(i)` into `π̂(i)` and spreads
//! `γ·w(i,j)·r(i) / (d(i)^(1-β)·d(j)^β)` to each neighbor, which preserves
//! the relation. Once every `|r(i)| ≤ r_max·d(i)^(1-β)` the estimate is
//! within [`FilterSchedule::error_bound`] of the exact filter output.
//!
//! Zero-degree nodes are never pushed. Their exact value is `γ₀·x(i)`, which
//! the relation pins to `π̂(i) + γ₀·r(i)`; [`PropagationState::readout`]
//! reports that sum for them.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{NodeId, WeightedDynamicGraph};
use crate::schedule::FilterSchedule;

/// Default cap on push operations per column per convergence call.
pub const DEFAULT_WORK_BUDGET: u64 = 1_000_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrontierOrder {
    #[default]
    Fifo,
    Lifo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConvergenceReport {
    pub pushes: u64,
    pub converged: bool,
    /// Over-threshold nodes left when the budget ran out.
    pub remaining: usize,
}

impl ConvergenceReport {
    pub fn merge(self, other: ConvergenceReport) -> ConvergenceReport {
        ConvergenceReport {
            pushes: self.pushes + other.pushes,
            converged: other.converged,
            remaining: other.remaining,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationState {
    estimate: Vec<f64>,
    residual: Vec<f64>,
    frontier: VecDeque<NodeId>,
    queued: Vec<bool>,
    order: FrontierOrder,
}

impl PropagationState {
    /// `π̂ = 0`, `r = x`, frontier seeded with every over-threshold node.
    pub fn init(
        graph: &WeightedDynamicGraph,
        schedule: &FilterSchedule,
        column: &[f64],
    ) -> Result<Self> {
        let n = graph.node_count();
        if column.len() < n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: column.len(),
            });
        }
        let mut state = PropagationState {
            estimate: vec![0.0; n],
            residual: column[..n].to_vec(),
            frontier: VecDeque::new(),
            queued: vec![false; n],
            order: FrontierOrder::Fifo,
        };
        for i in 0..n {
            state.refresh(graph, schedule, NodeId::from_index(i));
        }
        Ok(state)
    }

    pub fn with_order(mut self, order: FrontierOrder) -> Self {
        self.order = order;
        self
    }

    pub fn len(&self) -> usize {
        self.estimate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimate.is_empty()
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.estimate, &mut self.residual)
    }

    /// Frontier entries in pop order. May contain stale entries whose
    /// residual has since dropped under threshold; those are skipped on pop.
    pub fn frontier(&self) -> impl Iterator<Item = NodeId> + '_ {
        let it: Box<dyn Iterator<Item = &NodeId>> = match self.order {
            FrontierOrder::Fifo => Box::new(self.frontier.iter()),
            FrontierOrder::Lifo => Box::new(self.frontier.iter().rev()),
        };
        it.copied()
    }

    pub fn is_queued(&self, node: NodeId) -> bool {
        self.queued[node.index()]
    }

    /// Registers nodes `len()..n` as isolated with `r = x`.
    pub fn grow(&mut self, n: usize, column: &[f64]) -> Result<()> {
        if n <= self.len() {
            return Ok(());
        }
        if column.len() < n {
            return Err(Error::MissingFeatureRow {
                node: NodeId::from_index(column.len()),
                rows: column.len(),
            });
        }
        self.residual.extend_from_slice(&column[self.len()..n]);
        self.estimate.resize(n, 0.0);
        self.queued.resize(n, false);
        Ok(())
    }

    /// Queues `node` for a threshold check at the next convergence call.
    #[inline]
    pub fn mark(&mut self, node: NodeId) {
        let i = node.index();
        if !self.queued[i] {
            self.queued[i] = true;
            self.frontier.push_back(node);
        }
    }

    /// Queues `node` if it currently exceeds its threshold.
    pub fn refresh(&mut self, graph: &WeightedDynamicGraph, schedule: &FilterSchedule, node: NodeId) {
        let d = graph.degree(node);
        if d > 0.0 && self.residual[node.index()].abs() > schedule.threshold(d) {
            self.mark(node);
        }
    }

    fn pop(&mut self) -> Option<NodeId> {
        let next = match self.order {
            FrontierOrder::Fifo => self.frontier.pop_front(),
            FrontierOrder::Lifo => self.frontier.pop_back(),
        }?;
        self.queued[next.index()] = false;
        Some(next)
    }

    /// One push at `node`, regardless of its residual.
    pub fn push_node(
        &mut self,
        graph: &WeightedDynamicGraph,
        schedule: &FilterSchedule,
        node: NodeId,
    ) -> Result<()> {
        if !graph.contains(node) || node.index() >= self.len() {
            return Err(Error::UnknownNode(node));
        }
        if graph.degree(node) <= 0.0 {
            return Err(Error::ZeroDegreePush(node));
        }
        self.push_unchecked(graph, schedule, node);
        Ok(())
    }

    #[inline]
    fn push_unchecked(&mut self, graph: &WeightedDynamicGraph, schedule: &FilterSchedule, node: NodeId) {
        let powers = graph.degree_powers(schedule.beta());
        let r_max = schedule.r_max();
        let i = node.index();
        let r = self.residual[i];
        self.estimate[i] += schedule.gamma0() * r;
        self.residual[i] = 0.0;
        let spread = schedule.gamma() * r / powers.comp(i);
        for (nb, w) in graph.neighbors(node) {
            let j = nb.index();
            let rj = self.residual[j] + spread * w / powers.beta(j);
            self.residual[j] = rj;
            if !self.queued[j] && rj.abs() > r_max * powers.comp(j) {
                self.queued[j] = true;
                self.frontier.push_back(nb);
            }
        }
    }

    /// Pushes until no node exceeds its threshold or `budget` pushes ran.
    pub fn push_until_converged(
        &mut self,
        graph: &WeightedDynamicGraph,
        schedule: &FilterSchedule,
        budget: u64,
    ) -> ConvergenceReport {
        let powers = graph.degree_powers(schedule.beta());
        let r_max = schedule.r_max();
        let mut pushes = 0u64;
        while pushes < budget {
            let Some(node) = self.pop() else { break };
            let i = node.index();
            if graph.degree(node) <= 0.0 || self.residual[i].abs() <= r_max * powers.comp(i) {
                continue;
            }
            self.push_unchecked(graph, schedule, node);
            pushes += 1;
        }
        if pushes >= budget {
            // drop stale entries so `remaining` counts real work only
            let residual = &self.residual;
            let queued = &mut self.queued;
            self.frontier.retain(|&node| {
                let i = node.index();
                let live = graph.degree(node) > 0.0 && residual[i].abs() > r_max * powers.comp(i);
                if !live {
                    queued[i] = false;
                }
                live
            });
        }
        let remaining = self.frontier.len();
        ConvergenceReport {
            pushes,
            converged: remaining == 0,
            remaining,
        }
    }

    /// True when no node with positive degree exceeds its threshold.
    pub fn is_converged(&self, graph: &WeightedDynamicGraph, schedule: &FilterSchedule) -> bool {
        (0..self.len()).all(|i| {
            let d = graph.degree(NodeId::from_index(i));
            d <= 0.0 || self.residual[i].abs() <= schedule.threshold(d)
        })
    }

    /// Embedding value of one node: `π̂(i)`, or `π̂(i) + γ₀·r(i)` when the
    /// node is isolated.
    #[inline]
    pub fn readout_at(&self, graph: &WeightedDynamicGraph, schedule: &FilterSchedule, node: NodeId) -> f64 {
        let i = node.index();
        if graph.degree(node) > 0.0 {
            self.estimate[i]
        } else {
            self.estimate[i] + schedule.gamma0() * self.residual[i]
        }
    }

    pub fn readout(&self, graph: &WeightedDynamicGraph, schedule: &FilterSchedule) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.readout_at(graph, schedule, NodeId::from_index(i)))
            .collect()
    }
}

/// `init_state`: fresh state for one feature column.
pub fn init_state(
    graph: &WeightedDynamicGraph,
    schedule: &FilterSchedule,
    column: &[f64],
) -> Result<PropagationState> {
    PropagationState::init(graph, schedule, column)
}

/// Largest per-node violation of the estimate/residual relation.
#[allow(clippy::needless_range_loop)]
pub fn verify_invariant(
    graph: &WeightedDynamicGraph,
    schedule: &FilterSchedule,
    state: &PropagationState,
    column: &[f64],
) -> f64 {
    let beta = schedule.beta();
    let (g0, g) = (schedule.gamma0(), schedule.gamma());
    let mut worst = 0.0f64;
    for i in 0..state.len() {
        let node = NodeId::from_index(i);
        let lhs = state.estimate[i] + g0 * state.residual[i];
        let d_i = graph.degree(node);
        let mut rhs = g0 * column[i];
        if d_i > 0.0 {
            let left = d_i.powf(beta);
            for (j, w) in graph.neighbors(node) {
                let d_j = graph.degree(j);
                rhs += g * w * state.estimate[j.index()] / (left * d_j.powf(1.0 - beta));
            }
        }
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
