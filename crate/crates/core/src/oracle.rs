//! Exhaustive reference computations.
//!
//! Nothing here touches the assignment solver or the flow code: optima are
//! found by a memoised search over items with the remaining buyer capacities
//! as state, and every set question is answered by plain subset enumeration.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::matching::{BMatching, BipartiteGraph};
use crate::model::{Allocation, Market};
use crate::rational::Rational;

pub const DEFAULT_ITEM_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("{items} items exceed the oracle cap of {cap}")]
    TooLarge { items: usize, cap: usize },
}

struct Search<'a> {
    g: &'a BipartiteGraph,
    /// Incident edges per item.
    by_item: Vec<Vec<usize>>,
    memo: HashMap<(usize, Vec<u32>), Rational>,
}

impl<'a> Search<'a> {
    fn new(g: &'a BipartiteGraph) -> Self {
        let mut by_item = vec![Vec::new(); g.n_items()];
        for (i, e) in g.edges().iter().enumerate() {
            by_item[e.item].push(i);
        }
        Search {
            g,
            by_item,
            memo: HashMap::new(),
        }
    }

    /// Best weight obtainable from items `s..` with remaining capacities.
    fn best(&mut self, s: usize, caps: &mut Vec<u32>) -> Rational {
        if s == self.g.n_items() {
            return Rational::zero();
        }
        if let Some(v) = self.memo.get(&(s, caps.clone())) {
            return v.clone();
        }
        let mut best = self.best(s + 1, caps);
        for k in 0..self.by_item[s].len() {
            let e = self.by_item[s][k];
            let t = self.g.edge(e).buyer;
            if caps[t] == 0 {
                continue;
            }
            caps[t] -= 1;
            let v = &self.g.edge(e).weight + &self.best(s + 1, caps);
            caps[t] += 1;
            best = best.max(v);
        }
        self.memo.insert((s, caps.clone()), best.clone());
        best
    }

    fn collect(
        &mut self,
        s: usize,
        caps: &mut Vec<u32>,
        chosen: &mut Vec<usize>,
        out: &mut Vec<BMatching>,
    ) {
        if s == self.g.n_items() {
            out.push(BMatching::from_edges(chosen.clone()));
            return;
        }
        let target = self.best(s, caps);
        if self.best(s + 1, caps) == target {
            self.collect(s + 1, caps, chosen, out);
        }
        for k in 0..self.by_item[s].len() {
            let e = self.by_item[s][k];
            let t = self.g.edge(e).buyer;
            if caps[t] == 0 {
                continue;
            }
            caps[t] -= 1;
            if &self.g.edge(e).weight + &self.best(s + 1, caps) == target {
                chosen.push(e);
                self.collect(s + 1, caps, chosen, out);
                chosen.pop();
            }
            caps[t] += 1;
        }
    }
}

/// Maximum weight of a b-matching.
pub fn max_bmatching_value(g: &BipartiteGraph) -> Rational {
    Search::new(g).best(0, &mut g.capacities().to_vec())
}

/// Every maximum weight b-matching.
pub fn all_max_bmatchings(g: &BipartiteGraph) -> Vec<BMatching> {
    let mut search = Search::new(g);
    let mut out = Vec::new();
    search.collect(0, &mut g.capacities().to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Every b-factor: each item used once, each buyer filled to capacity.
pub fn all_bfactors(g: &BipartiteGraph) -> Vec<BMatching> {
    fn go(
        g: &BipartiteGraph,
        s: usize,
        caps: &mut Vec<u32>,
        left: u64,
        chosen: &mut Vec<usize>,
        out: &mut Vec<BMatching>,
    ) {
        if s == g.n_items() {
            if left == 0 {
                out.push(BMatching::from_edges(chosen.clone()));
            }
            return;
        }
        if (g.n_items() - s) as u64 != left {
            return;
        }
        for t in g.buyers_of(s) {
            if caps[t] == 0 {
                continue;
            }
            caps[t] -= 1;
            chosen.push(g.edge_between(s, t).unwrap());
            go(g, s + 1, caps, left - 1, chosen, out);
            chosen.pop();
            caps[t] += 1;
        }
    }
    let mut out = Vec::new();
    go(
        g,
        0,
        &mut g.capacities().to_vec(),
        g.total_capacity(),
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// Exhaustive maximum welfare and the complete list of optimal allocations.
pub fn oracle_opt(m: &Market) -> Result<(Rational, Vec<Allocation>), OracleError> {
    oracle_opt_capped(m, DEFAULT_ITEM_CAP)
}

pub fn oracle_opt_capped(
    m: &Market,
    cap: usize,
) -> Result<(Rational, Vec<Allocation>), OracleError> {
    if m.n_items() > cap {
        return Err(OracleError::TooLarge {
            items: m.n_items(),
            cap,
        });
    }
    let g = BipartiteGraph::from_market(m);
    let opt = max_bmatching_value(&g);
    let all = all_max_bmatchings(&g)
        .iter()
        .map(|mm| g.allocation(mm))
        .collect();
    Ok((opt, all))
}

/// Maximum welfare only; no enumeration and no size cap.
pub fn oracle_opt_value(m: &Market) -> Rational {
    max_bmatching_value(&BipartiteGraph::from_market(m))
}

/// `|N(Y)| − b(Y)` for a buyer set.
pub fn surplus(g: &BipartiteGraph, buyers: &[usize]) -> i64 {
    let n = g.neighborhood(buyers).len() as i64;
    n - buyers.iter().map(|&t| g.capacity(t) as i64).sum::<i64>()
}

fn members(mask: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&t| mask >> t & 1 == 1).collect()
}

/// All non-empty proper buyer subsets, as sorted index lists.
pub fn proper_subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    let full = if n == 0 { 0 } else { (1u64 << n) - 1 };
    (1..full).map(move |mask| members(mask, n))
}

/// Minimum surplus over non-empty proper subsets honoring the constraints;
/// ties go to the first subset in mask order.
pub fn min_surplus_brute(
    g: &BipartiteGraph,
    include: &BTreeSet<usize>,
    exclude: &BTreeSet<usize>,
) -> Option<(Vec<usize>, i64)> {
    proper_subsets(g.n_buyers())
        .filter(|y| include.iter().all(|t| y.contains(t)) && !y.iter().any(|t| exclude.contains(t)))
        .map(|y| {
            let s = surplus(g, &y);
            (y, s)
        })
        .min_by_key(|(_, s)| *s)
}

/// Non-empty proper buyer sets with surplus exactly one.
pub fn dangerous_sets_brute(g: &BipartiteGraph) -> Vec<Vec<usize>> {
    proper_subsets(g.n_buyers())
        .filter(|y| surplus(g, y) == 1)
        .collect()
}

/// Whether some b-factor gives `buyer` exactly `bundle`.
pub fn feasible_brute(g: &BipartiteGraph, buyer: usize, bundle: &BTreeSet<usize>) -> bool {
    all_bfactors(g).iter().any(|f| {
        let got: BTreeSet<usize> = f
            .edges()
            .iter()
            .map(|&e| g.edge(e))
            .filter(|e| e.buyer == buyer)
            .map(|e| e.item)
            .collect();
        &got == bundle
    })
}
