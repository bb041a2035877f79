//! Restores the estimate/residual relation after the graph changes, then
//! re-propagates.
//!
//! The update runs in two phases over the affected nodes of a
//! [`SnapshotDiff`]:
//!
//! 1. rescale `π̂(u)` by `(d_new/d_old)^(1-β)` so that every neighbor's view
//!    `π̂(u)/d(u)^(1-β)` is unchanged, and move the difference into `r(u)`;
//! 2. add to `r(u)` the change of the right-hand side at `u` caused by its
//!    own degree change and its added/removed neighbor weights.
//!
//! Phase 2 reads each neighbor's view `π̂(v)/d(v)^(1-β)`. Phase 1 leaves it
//! unchanged whenever `d_new(v) > 0`, so the value captured before rescaling
//! is used throughout; that also covers neighbors that become isolated,
//! whose view is otherwise undefined.

use crate::diff::{NodeChange, SnapshotDiff};
use crate::error::{Error, Result};
use crate::graph::{GraphEvent, NodeId, WeightedDynamicGraph};
use crate::push::{ConvergenceReport, PropagationState};
use crate::schedule::FilterSchedule;

/// `π̂(u)/d^(1-β)` as seen by neighbors, 0 for isolated nodes.
#[inline]
fn neighbor_view(estimate: f64, degree: f64, beta: f64) -> f64 {
    if degree > 0.0 {
        estimate / degree.powf(1.0 - beta)
    } else {
        0.0
    }
}

/// Phase 1 at one node. Keeps `π̂(u) + γ₀·r(u)` fixed.
pub fn rescale_estimate(
    state: &mut PropagationState,
    u: NodeId,
    d_old: f64,
    d_new: f64,
    schedule: &FilterSchedule,
) -> Result<()> {
    let (estimate, residual) = state.parts_mut();
    let i = u.index();
    if i >= estimate.len() {
        return Err(Error::UnknownNode(u));
    }
    let est = estimate[i];
    if d_old == d_new || est == 0.0 {
        return Ok(());
    }
    if d_old <= 0.0 {
        return Err(Error::DetachedEstimate {
            node: u,
            estimate: est,
            degree: d_old,
        });
    }
    let g0 = schedule.gamma0();
    if d_new <= 0.0 {
        // isolated: nothing reads π̂(u) any more
        residual[i] += est / g0;
        estimate[i] = 0.0;
        return Ok(());
    }
    let scaled = est * (d_new / d_old).powf(1.0 - schedule.beta());
    residual[i] += (est - scaled) / g0;
    estimate[i] = scaled;
    Ok(())
}

/// Phase 2 at one node. `view` returns a neighbor's `π̂(v)/d(v)^(1-β)`.
pub fn residual_increment<F>(
    state: &mut PropagationState,
    change: &NodeChange,
    x_u: f64,
    view: F,
    schedule: &FilterSchedule,
) -> Result<()>
where
    F: Fn(NodeId) -> Result<f64>,
{
    let (g0, g, beta) = (schedule.gamma0(), schedule.gamma(), schedule.beta());
    let (d_old, d_new) = (change.degree_before, change.degree_after);
    let i = change.node.index();
    let lhs = {
        let (est, res) = state.parts_mut();
        est[i] + g0 * res[i]
    };
    // old neighbor sum, γ·Σ w·view / d_old^β
    let carried = lhs - g0 * x_u;
    if d_new <= 0.0 {
        // isolated: the relation collapses to π̂(u) + γ₀·r(u) = γ₀·x(u)
        let (est, res) = state.parts_mut();
        res[i] = x_u - est[i] / g0;
        return Ok(());
    }
    let delta = {
        let mut neighbor_sum = 0.0;
        for &(v, w) in &change.added {
            neighbor_sum += w * view(v)?;
        }
        for &(v, w) in &change.removed {
            neighbor_sum -= w * view(v)?;
        }
        let rescaled = if d_old > 0.0 {
            carried * ((d_old / d_new).powf(beta) - 1.0)
        } else {
            -carried
        };
        rescaled + g * neighbor_sum / d_new.powf(beta)
    };
    let (_, res) = state.parts_mut();
    res[i] += delta / g0;
    Ok(())
}

/// Both phases for every affected node of `diff`; affected nodes are then
/// queued for the next convergence call. Nodes new in `diff` are registered
/// with `r = x`.
pub fn restore_invariant(
    state: &mut PropagationState,
    diff: &SnapshotDiff,
    column: &[f64],
    schedule: &FilterSchedule,
) -> Result<()> {
    state.grow(diff.node_count_after(), column)?;
    let beta = schedule.beta();
    let views: Vec<f64> = diff
        .nodes()
        .iter()
        .map(|c| neighbor_view(state.estimate()[c.node.index()], c.degree_before, beta))
        .collect();
    for c in diff.nodes() {
        rescale_estimate(state, c.node, c.degree_before, c.degree_after, schedule)?;
    }
    let view = |v: NodeId| {
        diff.position(v)
            .map(|k| views[k])
            .ok_or(Error::AsymmetricDiff(v))
    };
    for c in diff.nodes() {
        residual_increment(state, c, column[c.node.index()], view, schedule)?;
    }
    for c in diff.nodes() {
        state.mark(c.node);
    }
    Ok(())
}

/// Restores the relation for a diff already applied to `graph`, then pushes
/// to convergence on `graph`.
pub fn apply_batch_update(
    graph: &WeightedDynamicGraph,
    state: &mut PropagationState,
    diff: &SnapshotDiff,
    column: &[f64],
    schedule: &FilterSchedule,
    budget: u64,
) -> Result<ConvergenceReport> {
    restore_invariant(state, diff, column, schedule)?;
    Ok(state.push_until_converged(graph, schedule, budget))
}

/// Applies one event to `graph` and restores `state`. With `eager` the state
/// is also pushed to convergence; otherwise pushing waits for the caller.
pub fn apply_single_event(
    graph: &mut WeightedDynamicGraph,
    state: &mut PropagationState,
    event: &GraphEvent,
    column: &[f64],
    schedule: &FilterSchedule,
    eager: bool,
    budget: u64,
) -> Result<Option<ConvergenceReport>> {
    let diff = graph.apply_event(event)?;
    if eager {
        apply_batch_update(graph, state, &diff, column, schedule, budget).map(Some)
    } else {
        restore_invariant(state, &diff, column, schedule)?;
        Ok(None)
    }
}
