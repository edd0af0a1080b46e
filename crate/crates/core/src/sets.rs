//! Buyer-set structure of a tight graph: bundle feasibility, neighborhood
//! surplus `|N(Y)| − b(Y)`, dangerous sets (surplus exactly one) and the
//! legality classes of three-buyer markets.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::matching::{bfactor_exists, BipartiteGraph, FlowNetwork, INF};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SetError {
    #[error("expected {expected} buyers, found {found}")]
    BuyerCount { expected: usize, found: usize },
    #[error("buyer index {0} is not in the graph")]
    UnknownBuyer(usize),
    #[error("item {item} is not a neighbor of buyer {buyer}")]
    NotInNeighborhood { buyer: usize, item: usize },
    #[error("bundle for buyer {buyer} has {found} items, demand is {expected}")]
    WrongBundleSize {
        buyer: usize,
        expected: u32,
        found: usize,
    },
    #[error("buyer set {0:?} has surplus {1}; dangerous-set search needs surplus at least one")]
    SurplusTooSmall(Vec<usize>, i64),
}

/// Constraints on the buyer set sought by [`min_surplus_set`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SurplusQuery {
    pub must_include: BTreeSet<usize>,
    pub must_exclude: BTreeSet<usize>,
}

impl SurplusQuery {
    pub fn including(buyers: impl IntoIterator<Item = usize>) -> Self {
        SurplusQuery {
            must_include: buyers.into_iter().collect(),
            must_exclude: BTreeSet::new(),
        }
    }

    pub fn excluding(buyers: impl IntoIterator<Item = usize>) -> Self {
        SurplusQuery {
            must_include: BTreeSet::new(),
            must_exclude: buyers.into_iter().collect(),
        }
    }
}

/// `|N(Y)| − b(Y)`.
pub fn surplus(g: &BipartiteGraph, buyers: &[usize]) -> i64 {
    let demand: i64 = buyers.iter().map(|&t| g.capacity(t) as i64).sum();
    g.neighborhood(buyers).len() as i64 - demand
}

/// Whether `bundle` can be completed to a b-factor of `g` in which `buyer`
/// receives exactly `bundle`.
pub fn feasible_bundle(
    g: &BipartiteGraph,
    buyer: usize,
    bundle: &BTreeSet<usize>,
) -> Result<bool, SetError> {
    if buyer >= g.n_buyers() {
        return Err(SetError::UnknownBuyer(buyer));
    }
    if let Some(&item) = bundle.iter().find(|&&s| g.edge_between(s, buyer).is_none()) {
        return Err(SetError::NotInNeighborhood { buyer, item });
    }
    if bundle.len() != g.capacity(buyer) as usize {
        return Err(SetError::WrongBundleSize {
            buyer,
            expected: g.capacity(buyer),
            found: bundle.len(),
        });
    }
    let keep_items: Vec<bool> = (0..g.n_items()).map(|s| !bundle.contains(&s)).collect();
    let keep_buyers: Vec<bool> = (0..g.n_buyers()).map(|t| t != buyer).collect();
    Ok(bfactor_exists(&g.induced(&keep_items, &keep_buyers)).exists())
}

/// Minimum surplus over sets containing `include` and avoiding `exclude`,
/// both non-empty; one min-cut.
fn min_surplus_cut(
    g: &BipartiteGraph,
    include: &BTreeSet<usize>,
    exclude: &BTreeSet<usize>,
) -> (Vec<usize>, i64) {
    let nb = g.n_buyers();
    let ni = g.n_items();
    let (source, sink) = (nb + ni, nb + ni + 1);
    let mut net = FlowNetwork::new(nb + ni + 2);
    let mut base = 0i64;
    for t in (0..nb).filter(|t| !exclude.contains(t)) {
        base += g.capacity(t) as i64;
        let cap = if include.contains(&t) {
            INF
        } else {
            g.capacity(t) as i64
        };
        net.add_arc(source, t, cap);
        for s in g.neighbors(t) {
            net.add_arc(t, nb + s, INF);
        }
    }
    for s in 0..ni {
        net.add_arc(nb + s, sink, 1);
    }
    let cut = net.max_flow(source, sink);
    let side = net.source_side(source);
    ((0..nb).filter(|&t| side[t]).collect(), cut - base)
}

/// A non-empty proper buyer set of minimum surplus subject to `q`, with its
/// surplus; `None` when no set satisfies the constraints.
pub fn min_surplus_set(g: &BipartiteGraph, q: &SurplusQuery) -> Option<(Vec<usize>, i64)> {
    let nb = g.n_buyers();
    if q.must_include
        .iter()
        .chain(&q.must_exclude)
        .any(|&t| t >= nb)
        || !q.must_include.is_disjoint(&q.must_exclude)
    {
        return None;
    }
    let includes: Vec<BTreeSet<usize>> = if q.must_include.is_empty() {
        (0..nb)
            .filter(|t| !q.must_exclude.contains(t))
            .map(|t| BTreeSet::from([t]))
            .collect()
    } else {
        vec![q.must_include.clone()]
    };
    let mut best: Option<(Vec<usize>, i64)> = None;
    for include in includes {
        let excludes: Vec<BTreeSet<usize>> = if q.must_exclude.is_empty() {
            (0..nb)
                .filter(|t| !include.contains(t))
                .map(|t| BTreeSet::from([t]))
                .collect()
        } else {
            vec![q.must_exclude.clone()]
        };
        for exclude in excludes {
            let (y, s) = min_surplus_cut(g, &include, &exclude);
            if best.as_ref().is_none_or(|(_, b)| s < *b) {
                best = Some((y, s));
            }
        }
    }
    best
}

/// Grows a dangerous set one buyer at a time. A buyer rejected once stays
/// rejected: any dangerous superset of a later set also contains the earlier one.
fn grow_dangerous(g: &BipartiteGraph, mut z: Vec<usize>) -> Vec<usize> {
    for t in 0..g.n_buyers() {
        if z.contains(&t) {
            continue;
        }
        let q = SurplusQuery::including(z.iter().copied().chain([t]));
        if let Some((bigger, 1)) = min_surplus_set(g, &q) {
            z = bigger;
        }
    }
    z
}

/// An inclusion-wise maximal dangerous set, or `None` when every non-empty
/// proper set has surplus at least two. Every buyer that lies in some
/// dangerous set seeds one greedy growth; the largest result is returned,
/// ties going to the lowest seed.
pub fn maximal_dangerous_set(g: &BipartiteGraph) -> Result<Option<Vec<usize>>, SetError> {
    let Some((y, s)) = min_surplus_set(g, &SurplusQuery::default()) else {
        return Ok(None);
    };
    if s < 1 {
        return Err(SetError::SurplusTooSmall(y, s));
    }
    if s > 1 {
        return Ok(None);
    }
    let mut best: Option<Vec<usize>> = None;
    for t in 0..g.n_buyers() {
        if best.as_ref().is_some_and(|b| b.contains(&t)) {
            continue;
        }
        if let Some((seed, 1)) = min_surplus_set(g, &SurplusQuery::including([t])) {
            let z = grow_dangerous(g, seed);
            if best.as_ref().is_none_or(|b| z.len() > b.len()) {
                best = Some(z);
            }
        }
    }
    Ok(best)
}

/// An inclusion-wise minimal dangerous set disjoint from `z`, if any.
pub fn minimal_dangerous_disjoint(g: &BipartiteGraph, z: &[usize]) -> Option<Vec<usize>> {
    let (mut x, s) = min_surplus_set(g, &SurplusQuery::excluding(z.iter().copied()))?;
    if s != 1 {
        return None;
    }
    for t in x.clone() {
        if !x.contains(&t) || x.len() == 1 {
            continue;
        }
        let outside = (0..g.n_buyers()).filter(|u| !x.contains(u) || *u == t);
        let q = SurplusQuery::excluding(z.iter().copied().chain(outside));
        if let Some((smaller, 1)) = min_surplus_set(g, &q) {
            x = smaller;
        }
    }
    Some(x)
}

/// Items grouped by the exact set of buyers they are adjacent to, for a
/// three-buyer graph. Class `I` is stored at the bitmask of `I`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegalClasses {
    classes: [Vec<usize>; 8],
}

impl LegalClasses {
    /// The items adjacent to exactly the listed buyers.
    pub fn get(&self, buyers: &[usize]) -> &[usize] {
        &self.classes[buyers.iter().fold(0, |m, &t| m | 1 << t)]
    }

    pub fn by_mask(&self, mask: usize) -> &[usize] {
        &self.classes[mask]
    }
}

pub fn legal_classes_3(g: &BipartiteGraph) -> Result<LegalClasses, SetError> {
    if g.n_buyers() != 3 {
        return Err(SetError::BuyerCount {
            expected: 3,
            found: g.n_buyers(),
        });
    }
    let mut classes: [Vec<usize>; 8] = Default::default();
    for s in 0..g.n_items() {
        let mask = g.buyers_of(s).iter().fold(0, |m, &t| m | 1 << t);
        classes[mask].push(s);
    }
    Ok(LegalClasses { classes })
}
