//! Reference filter output by truncated power series, `Σ_k γ₀γ^k P^k X`
//! with `P = D^-β A D^(β-1)`.
//!
//! Shares nothing with the push code path: degrees are re-summed from the
//! adjacency and the series is accumulated term by term.

use crate::error::{Error, Result};
use crate::graph::{NodeId, WeightedDynamicGraph};
use crate::matrix::Matrix;
use crate::schedule::FilterSchedule;

pub const ORACLE_NODE_LIMIT: usize = 5000;

/// Series terms before the oracle gives up on reaching `tail_tol`.
const MAX_TERMS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct OracleOutput {
    pub values: Matrix,
    /// Number of series terms summed (`K + 1`).
    pub terms: usize,
    /// ℓ∞ norm of the first omitted term.
    pub next_term: f64,
}

/// Default series tolerance for a schedule: `r_max·10⁻³`.
pub fn default_tail_tol(schedule: &FilterSchedule) -> f64 {
    schedule.r_max() * 1e-3
}

pub fn dense_propagation(
    graph: &WeightedDynamicGraph,
    schedule: &FilterSchedule,
    features: &Matrix,
    tail_tol: f64,
) -> Result<Matrix> {
    dense_propagation_terms(graph, schedule, features, tail_tol).map(|o| o.values)
}

pub fn dense_propagation_terms(
    graph: &WeightedDynamicGraph,
    schedule: &FilterSchedule,
    features: &Matrix,
    tail_tol: f64,
) -> Result<OracleOutput> {
    series(graph, schedule, features, tail_tol, MAX_TERMS)
}

/// Exactly the first `terms` series terms (fewer only if a term vanishes).
pub fn truncated_series(
    graph: &WeightedDynamicGraph,
    schedule: &FilterSchedule,
    features: &Matrix,
    terms: usize,
) -> Result<OracleOutput> {
    series(graph, schedule, features, 0.0, terms.max(1))
}

fn series(
    graph: &WeightedDynamicGraph,
    schedule: &FilterSchedule,
    features: &Matrix,
    tail_tol: f64,
    max_terms: usize,
) -> Result<OracleOutput> {
    let n = graph.node_count();
    if n > ORACLE_NODE_LIMIT {
        return Err(Error::OracleTooLarge {
            nodes: n,
            limit: ORACLE_NODE_LIMIT,
        });
    }
    if features.rows() < n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: features.rows(),
        });
    }
    let d = features.cols();
    let beta = schedule.beta();
    let degree: Vec<f64> = (0..n)
        .map(|i| graph.recomputed_degree(NodeId::from_index(i)))
        .collect();
    // P as (row, col, value) triplets; zero-degree rows and columns are empty
    let mut p: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for (j, w) in graph.neighbors(NodeId::from_index(i)) {
            let j = j.index();
            p.push((i, j, w / (degree[i].powf(beta) * degree[j].powf(1.0 - beta))));
        }
    }

    let mut term = Matrix::zeros(n, d);
    for i in 0..n {
        for (t, &x) in term.row_mut(i).iter_mut().zip(features.row(i)) {
            *t = schedule.gamma0() * x;
        }
    }
    let mut sum = term.clone();
    let mut terms = 1;
    loop {
        let mut next = Matrix::zeros(n, d);
        for &(i, j, pij) in &p {
            let scale = schedule.gamma() * pij;
            for (o, s) in next.row_mut(i).iter_mut().zip(term.row(j)) {
                *o += scale * s;
            }
        }
        let norm = next.max_abs();
        if norm < tail_tol || norm == 0.0 || terms >= max_terms {
            return Ok(OracleOutput {
                values: sum,
                terms,
                next_term: norm,
            });
        }
        for i in 0..n {
            for (s, v) in sum.row_mut(i).iter_mut().zip(next.row(i)) {
                *s += v;
            }
        }
        term = next;
        terms += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    /// Largest `|approx - exact| / error_bound(d(i))` over all entries.
    pub max_violation_ratio: f64,
    pub node: usize,
    pub column: usize,
}

impl BoundReport {
    pub fn passes(&self) -> bool {
        self.max_violation_ratio <= 1.0
    }
}

/// Entry-wise comparison against the per-node error guarantee. An entry
/// whose bound is 0 scores 0 when exact and infinity otherwise.
pub fn verify_error_bound(
    approx: &Matrix,
    exact: &Matrix,
    degrees: &[f64],
    schedule: &FilterSchedule,
) -> Result<BoundReport> {
    if approx.rows() != exact.rows() || approx.cols() != exact.cols() {
        return Err(Error::LengthMismatch {
            expected: exact.rows() * exact.cols(),
            actual: approx.rows() * approx.cols(),
        });
    }
    if degrees.len() != exact.rows() {
        return Err(Error::LengthMismatch {
            expected: exact.rows(),
            actual: degrees.len(),
        });
    }
    let mut report = BoundReport {
        max_violation_ratio: 0.0,
        node: 0,
        column: 0,
    };
    for (i, &d) in degrees.iter().enumerate() {
        let bound = schedule.error_bound(d);
        for j in 0..exact.cols() {
            let err = (approx.get(i, j) - exact.get(i, j)).abs();
            let ratio = if err == 0.0 {
                0.0
            } else if bound > 0.0 {
                err / bound
            } else {
                f64::INFINITY
            };
            if ratio > report.max_violation_ratio {
                report = BoundReport {
                    max_violation_ratio: ratio,
                    node: i,
                    column: j,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_columns(&[v.to_vec()])
    }

    #[test]
    fn empty_graph_scales_features() {
        let g = WeightedDynamicGraph::new(3);
        let s = FilterSchedule::ppr(0.2, 0.5, 1e-7).unwrap();
        let x = col(&[1.0, -2.0, 0.5]);
        let z = dense_propagation(&g, &s, &x, 1e-12).unwrap();
        assert_eq!(z.column(0), vec![0.2, -0.4, 0.1]);
    }

    #[test]
    fn two_node_closed_form() {
        let g = WeightedDynamicGraph::from_edges(2, [(0, 1, 1.0)]).unwrap();
        let s = FilterSchedule::ppr(0.2, 0.5, 1e-7).unwrap();
        let z = dense_propagation(&g, &s, &col(&[1.0, 0.0]), 1e-14).unwrap();
        assert_abs_diff_eq!(z.get(0, 0), 5.0 / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.get(1, 0), 4.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn triangle_symmetry() {
        let g = WeightedDynamicGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let s = FilterSchedule::ppr(0.5, 0.5, 1e-7).unwrap();
        let z = dense_propagation(&g, &s, &col(&[1.0, 0.0, 0.0]), 1e-14).unwrap();
        assert_eq!(z.get(1, 0), z.get(2, 0));
        assert!(z.get(0, 0) > z.get(1, 0));
    }

    #[test]
    fn tail_and_fixed_point_consistency() {
        let g = WeightedDynamicGraph::from_edges(
            5,
            [(0, 1, 1.0), (1, 2, 0.3), (2, 3, 1.7), (3, 4, 0.9), (4, 0, 1.1), (1, 3, 0.4)],
        )
        .unwrap();
        for s in [
            FilterSchedule::ppr(0.2, 0.5, 1e-7).unwrap(),
            FilterSchedule::highpass(0.2, 0.0, 1e-7).unwrap(),
            FilterSchedule::ppr(0.2, 1.0, 1e-7).unwrap(),
        ] {
            let x = col(&[0.4, -0.1, 0.3, 0.0, -0.5]);
            let tau = default_tail_tol(&s);
            let out = dense_propagation_terms(&g, &s, &x, tau).unwrap();
            assert!(out.next_term < tau);
            let longer = truncated_series(&g, &s, &x, out.terms + 1).unwrap().values;
            for i in 0..5 {
                assert!((longer.get(i, 0) - out.values.get(i, 0)).abs() < tau);
            }
            // π = γPπ + γ₀x
            let pi = out.values.column(0);
            for i in 0..5 {
                let node = NodeId::from_index(i);
                let di = g.recomputed_degree(node);
                let mut rhs = s.gamma0() * x.get(i, 0);
                for (j, w) in g.neighbors(node) {
                    let dj = g.recomputed_degree(j);
                    rhs += s.gamma() * w * pi[j.index()] / (di.powf(s.beta()) * dj.powf(1.0 - s.beta()));
                }
                assert!((pi[i] - rhs).abs() <= 2.0 * tau, "{} vs {}", pi[i], rhs);
            }
        }
    }

    #[test]
    fn size_guard() {
        let g = WeightedDynamicGraph::new(ORACLE_NODE_LIMIT + 1);
        let s = FilterSchedule::ppr(0.2, 0.5, 1e-7).unwrap();
        let x = Matrix::zeros(ORACLE_NODE_LIMIT + 1, 1);
        assert!(matches!(
            dense_propagation(&g, &s, &x, 1e-10),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn bound_report_cases() {
        let s = FilterSchedule::ppr(0.2, 0.5, 1e-7).unwrap();
        let exact = col(&[1.0, 2.0]);
        let degrees = [4.0, 1.0];
        let r = verify_error_bound(&exact, &exact, &degrees, &s).unwrap();
        assert_eq!(r.max_violation_ratio, 0.0);
        let bound = s.error_bound(4.0);
        let approx = col(&[1.0 + bound, 2.0]);
        let r = verify_error_bound(&approx, &exact, &degrees, &s).unwrap();
        assert_abs_diff_eq!(r.max_violation_ratio, 1.0, epsilon = 1e-6);
        assert_eq!((r.node, r.column), (0, 0));
        assert!(verify_error_bound(&col(&[1.0]), &exact, &degrees, &s).is_err());
    }
}
