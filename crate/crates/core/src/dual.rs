//! Structured optimal coverings.
//!
//! An arbitrary optimal covering may have tight edges that no optimal
//! b-matching uses, and zero values on vertices that every optimum saturates.
//! [`refine_covering`] perturbs the weights in two passes so that the final
//! covering has neither defect: an edge is tight exactly when it is legal, and
//! a vertex has value zero exactly when some optimum leaves it unsaturated.

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::matching::{self, BipartiteGraph, Covering, MatchingError, Vertex};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DualError {
    #[error("refined covering is not feasible")]
    Infeasible,
    #[error("refined covering has value {value}, optimum is {optimum}")]
    NotOptimal { value: Rational, optimum: Rational },
    #[error("edge {0} is tight but not legal")]
    TightNotLegal(usize),
    #[error("edge {0} is legal but not tight")]
    LegalNotTight(usize),
    #[error("vertex {0:?} has value zero but every optimum saturates it")]
    ZeroButSaturated(Vertex),
    #[error("vertex {0:?} has positive value but some optimum leaves it unsaturated")]
    PositiveButUnsaturated(Vertex),
}

/// `Δ(π)`: the smallest positive gap or positive value, or infinity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slack {
    Finite(Rational),
    Infinite,
}

impl Slack {
    pub fn finite(&self) -> Option<&Rational> {
        match self {
            Slack::Finite(r) => Some(r),
            Slack::Infinite => None,
        }
    }
}

impl fmt::Display for Slack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slack::Finite(r) => write!(f, "{r}"),
            Slack::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Slack {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredCovering {
    pub pi: Covering,
    /// Indices of the tight edges, ascending.
    pub tight_edges: Vec<usize>,
    pub slack: Slack,
}

/// One weight perturbation performed during refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RefineStep {
    /// Phase one: the edge's weight was raised by `raise`.
    Raise { edge: usize, raise: Rational },
    /// Phase two: every weight at the vertex was lowered by `lower`.
    Lower { vertex: Vertex, lower: Rational },
}

/// A perturbation together with the re-solved dual value and the primal
/// optimum of the perturbed weights; the two must agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TracedStep {
    pub step: RefineStep,
    pub dual_value: Rational,
    pub primal_optimum: Rational,
}

struct Refinement {
    pi: Covering,
    legal: Vec<bool>,
    /// Whether some optimum leaves the vertex below capacity.
    unsaturable_item: Vec<bool>,
    unsaturable_buyer: Vec<bool>,
    optimum: Rational,
    trace: Vec<TracedStep>,
}

fn refine(g: &BipartiteGraph, traced: bool) -> Refinement {
    let base = matching::solve(g);
    let optimum = base.weight.clone();
    let mut cur = g.clone();
    let mut trace = Vec::new();
    let record =
        |cur: &BipartiteGraph, step: RefineStep, primal: &Rational, trace: &mut Vec<TracedStep>| {
            if traced {
                let sol = matching::solve(cur);
                trace.push(TracedStep {
                    step,
                    dual_value: sol.covering.value(cur),
                    primal_optimum: primal.clone(),
                });
            }
        };

    let mut legal = vec![true; g.edges().len()];
    for e in 0..g.edges().len() {
        if base.matching.contains(e) {
            continue;
        }
        let forced = matching::max_weight_forced_edge(&cur, e).expect("edge index in range");
        let eps = &optimum - &forced;
        if eps.is_positive() {
            legal[e] = false;
            let raise = &eps / &Rational::from_integer(2);
            let w = &cur.edge(e).weight + &raise;
            cur.set_weight(e, w);
            record(
                &cur,
                RefineStep::Raise { edge: e, raise },
                &optimum,
                &mut trace,
            );
        }
    }

    let mut level = optimum.clone();
    let mut lift = Covering::zeros(g);
    let mut unsaturable_item = vec![true; g.n_items()];
    let mut unsaturable_buyer = vec![true; g.n_buyers()];
    let vertices: Vec<Vertex> = g.vertices().collect();
    for v in vertices {
        let cap = g.vertex_capacity(v);
        if base.matching.degree(g, v) < cap {
            continue;
        }
        let (_, reduced) = matching::solve_reduced_capacity(&cur, v);
        let delta = &level - &reduced;
        if !delta.is_positive() {
            continue;
        }
        match v {
            Vertex::Item(s) => unsaturable_item[s] = false,
            Vertex::Buyer(t) => unsaturable_buyer[t] = false,
        }
        let lower = &delta / &Rational::from_integer(cap as i64 + 1);
        let incident: Vec<usize> = cur.incident(v).collect();
        for e in incident {
            let w = &cur.edge(e).weight - &lower;
            cur.set_weight(e, w);
        }
        level = &level - &lower.scale(cap as u64);
        *lift.get_mut(v) = lower.clone();
        record(
            &cur,
            RefineStep::Lower { vertex: v, lower },
            &level,
            &mut trace,
        );
    }

    let mut pi = matching::optimal_covering(&cur);
    for (p, l) in pi.item.iter_mut().zip(&lift.item) {
        *p += l;
    }
    for (p, l) in pi.buyer.iter_mut().zip(&lift.buyer) {
        *p += l;
    }
    Refinement {
        pi,
        legal,
        unsaturable_item,
        unsaturable_buyer,
        optimum,
        trace,
    }
}

fn verify(g: &BipartiteGraph, r: &Refinement) -> Result<(), DualError> {
    if !r.pi.is_feasible(g) {
        return Err(DualError::Infeasible);
    }
    let value = r.pi.value(g);
    if value != r.optimum {
        return Err(DualError::NotOptimal {
            value,
            optimum: r.optimum.clone(),
        });
    }
    for (e, &legal) in r.legal.iter().enumerate() {
        match (r.pi.is_tight(g, e), legal) {
            (true, false) => return Err(DualError::TightNotLegal(e)),
            (false, true) => return Err(DualError::LegalNotTight(e)),
            _ => {}
        }
    }
    let flags = r
        .unsaturable_item
        .iter()
        .enumerate()
        .map(|(s, &u)| (Vertex::Item(s), u))
        .chain(
            r.unsaturable_buyer
                .iter()
                .enumerate()
                .map(|(t, &u)| (Vertex::Buyer(t), u)),
        );
    for (v, unsaturable) in flags {
        match (r.pi.get(v).is_zero(), unsaturable) {
            (true, false) => return Err(DualError::ZeroButSaturated(v)),
            (false, true) => return Err(DualError::PositiveButUnsaturated(v)),
            _ => {}
        }
    }
    Ok(())
}

fn package(g: &BipartiteGraph, pi: Covering) -> StructuredCovering {
    let tight_edges = (0..g.edges().len())
        .filter(|&e| pi.is_tight(g, e))
        .collect();
    let slack = slack_of(g, &pi);
    StructuredCovering {
        pi,
        tight_edges,
        slack,
    }
}

/// An optimal covering whose tight edges are exactly the legal edges and
/// whose zero entries are exactly the vertices some optimum leaves below
/// capacity. The result is checked against both properties before return.
pub fn refine_covering(g: &BipartiteGraph) -> Result<StructuredCovering, DualError> {
    let r = refine(g, false);
    verify(g, &r)?;
    Ok(package(g, r.pi))
}

/// [`refine_covering`] that also re-solves the dual after every perturbation
/// and records its value next to the perturbed primal optimum.
pub fn refine_covering_traced(
    g: &BipartiteGraph,
) -> Result<(StructuredCovering, Vec<TracedStep>), DualError> {
    let r = refine(g, true);
    verify(g, &r)?;
    let trace = r.trace.clone();
    Ok((package(g, r.pi), trace))
}

/// The graph of tight edges with unit weights.
pub fn tight_subgraph(sc: &StructuredCovering, g: &BipartiteGraph) -> BipartiteGraph {
    g.with_edges(|e| sc.tight_edges.binary_search(&e).is_ok())
        .with_unit_weights()
}

/// Whether some maximum weight b-matching contains edge `e`.
pub fn is_legal_edge(g: &BipartiteGraph, e: usize) -> Result<bool, MatchingError> {
    let forced = matching::max_weight_forced_edge(g, e)?;
    Ok(forced == matching::max_weight_bmatching(g).1)
}

/// `Δ(π)` evaluated by definition.
pub fn slack_of(g: &BipartiteGraph, pi: &Covering) -> Slack {
    let gaps = (0..g.edges().len()).map(|e| pi.gap(g, e));
    let values = pi.item.iter().chain(&pi.buyer).cloned();
    gaps.chain(values)
        .filter(Rational::is_positive)
        .min()
        .map_or(Slack::Infinite, Slack::Finite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bidemand_pair, dangerous_market, graph, two_optima_market, unit_pair};
    use crate::oracle::all_max_bmatchings;
    use proptest::prelude::*;

    fn q(n: i64) -> Rational {
        Rational::from_integer(n)
    }

    fn edge(g: &BipartiteGraph, s: usize, t: usize) -> usize {
        g.edge_between(s, t).unwrap()
    }

    /// Checks both structural properties against exhaustive enumeration.
    fn check_against_oracle(g: &BipartiteGraph, sc: &StructuredCovering) {
        let optima = all_max_bmatchings(g);
        for e in 0..g.edges().len() {
            let legal = optima.iter().any(|m| m.contains(e));
            assert_eq!(sc.pi.is_tight(g, e), legal, "edge {e}");
        }
        for v in g.vertices() {
            let unsat = optima.iter().any(|m| m.degree(g, v) < g.vertex_capacity(v));
            assert_eq!(sc.pi.get(v).is_zero(), unsat, "vertex {v:?}");
        }
    }

    #[test]
    fn e2_refined_is_positive_with_optimum_edges_tight() {
        let g = BipartiteGraph::from_market(&bidemand_pair());
        let sc = refine_covering(&g).unwrap();
        assert!(sc
            .pi
            .item
            .iter()
            .chain(&sc.pi.buyer)
            .all(Rational::is_positive));
        let expected: Vec<usize> = [(0, 0), (1, 0), (2, 1), (3, 1)]
            .iter()
            .map(|&(s, t)| edge(&g, s, t))
            .collect();
        assert_eq!(sc.tight_edges, expected);
        assert_eq!(sc.pi.value(&g), q(14));
    }

    #[test]
    fn e1_tight_edges_are_the_unique_optimum() {
        let g = BipartiteGraph::from_market(&unit_pair());
        let sc = refine_covering(&g).unwrap();
        assert_eq!(sc.tight_edges, vec![edge(&g, 0, 0), edge(&g, 1, 1)]);
        assert!(sc.pi.buyer.iter().all(Rational::is_positive));
    }

    #[test]
    fn zero_weight_edge_keeps_zero_covering() {
        let g = graph(1, &[1], &[(0, 0, 0)]);
        let sc = refine_covering(&g).unwrap();
        assert_eq!(sc.pi, Covering::zeros(&g));
        assert_eq!(sc.tight_edges, vec![0]);
        assert_eq!(sc.slack, Slack::Infinite);
        assert!(is_legal_edge(&g, 0).unwrap());
    }

    #[test]
    fn two_optima_refinement_matches_enumeration() {
        let g = BipartiteGraph::from_market(&two_optima_market());
        let sc = refine_covering(&g).unwrap();
        check_against_oracle(&g, &sc);
        assert!(sc.pi.is_tight(&g, edge(&g, 0, 0)));
        assert!(sc.pi.is_tight(&g, edge(&g, 2, 0)));
        assert!(sc.pi.is_tight(&g, edge(&g, 3, 0)));
        assert!(!sc.pi.is_tight(&g, edge(&g, 1, 0)));
    }

    #[test]
    fn d1_market_tight_graph_is_d1() {
        let g = BipartiteGraph::from_market(&dangerous_market());
        let sc = refine_covering(&g).unwrap();
        check_against_oracle(&g, &sc);
        let h = tight_subgraph(&sc, &g);
        assert_eq!(h.neighbors(0), vec![0, 1, 2]);
        assert_eq!(h.neighbors(1), vec![1, 2, 3, 4, 5]);
        assert_eq!(h.neighbors(2), vec![3, 4, 5]);
    }

    #[test]
    fn tight_subgraph_of_uniform_weights_is_complete() {
        let g = graph(2, &[1, 1], &[(0, 0, 3), (0, 1, 3), (1, 0, 3), (1, 1, 3)]);
        let sc = refine_covering(&g).unwrap();
        let h = tight_subgraph(&sc, &g);
        assert_eq!(h.edges().len(), 4);
        assert!(h.edges().iter().all(|e| e.weight == q(1)));
    }

    #[test]
    fn legality_examples() {
        let g = BipartiteGraph::from_market(&unit_pair());
        assert!(is_legal_edge(&g, edge(&g, 0, 0)).unwrap());
        assert!(!is_legal_edge(&g, edge(&g, 0, 1)).unwrap());
        let single = graph(1, &[1], &[(0, 0, 4)]);
        assert!(is_legal_edge(&single, 0).unwrap());
        assert!(is_legal_edge(&single, 5).is_err());
    }

    #[test]
    fn slack_examples() {
        let g = graph(1, &[1], &[(0, 0, 2)]);
        let pi = Covering {
            item: vec![q(1)],
            buyer: vec![q(1)],
        };
        assert_eq!(slack_of(&g, &pi), Slack::Finite(q(1)));

        let g = BipartiteGraph::from_market(&bidemand_pair());
        let sc = refine_covering(&g).unwrap();
        let mut expected: Option<Rational> = None;
        for e in 0..g.edges().len() {
            let gap = sc.pi.gap(&g, e);
            if gap.is_positive() {
                expected = Some(expected.map_or(gap.clone(), |x| x.min(gap)));
            }
        }
        for p in sc.pi.item.iter().chain(&sc.pi.buyer) {
            if p.is_positive() {
                expected = Some(expected.map_or(p.clone(), |x| x.min(p.clone())));
            }
        }
        assert_eq!(sc.slack, Slack::Finite(expected.unwrap()));
        assert!(sc.slack.finite().unwrap().is_positive());
    }

    #[test]
    fn traced_steps_keep_dual_equal_to_primal() {
        let g = BipartiteGraph::from_market(&two_optima_market());
        let (sc, trace) = refine_covering_traced(&g).unwrap();
        assert!(!trace.is_empty());
        for step in &trace {
            assert_eq!(step.dual_value, step.primal_optimum);
        }
        assert_eq!(sc, refine_covering(&g).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn refinement_agrees_with_enumeration(
            caps in prop::collection::vec(1u32..=3, 1..=3),
            weights in prop::collection::vec(0i64..=4, 18),
            n_items in 1usize..=6,
        ) {
            let mut edges = Vec::new();
            for s in 0..n_items {
                for t in 0..caps.len() {
                    edges.push((s, t, weights[(s * 3 + t) % weights.len()]));
                }
            }
            let g = graph(n_items, &caps, &edges);
            let sc = refine_covering(&g).unwrap();
            check_against_oracle(&g, &sc);
        }
    }
}
