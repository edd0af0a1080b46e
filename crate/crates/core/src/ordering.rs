//! Adequate item orderings.
//!
//! An ordering is adequate for a graph with a b-factor when every buyer's
//! first `b(t)` neighbors, taken in that order, extend to a b-factor. The
//! constructions here cover two buyers, three buyers with arbitrary demands,
//! and any number of buyers with demand at most two.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{refine_covering, tight_subgraph, DualError};
use crate::matching::{bfactor_exists, BipartiteGraph, Covering};
use crate::model::{BuyerId, ItemId};
use crate::sets::{self, feasible_bundle, legal_classes_3, SetError, SurplusQuery};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderError {
    #[error("expected at most {max} buyers, found {found}")]
    TooManyBuyers { max: usize, found: usize },
    #[error("expected exactly {expected} buyers, found {found}")]
    BuyerCount { expected: usize, found: usize },
    #[error("buyer `{buyer}` has demand {demand}, at most {max} is supported")]
    DemandTooLarge {
        buyer: BuyerId,
        demand: u32,
        max: u32,
    },
    #[error("the graph has no b-factor")]
    NoFactor,
    #[error("item `{0}` appears twice in the ordering")]
    DuplicateItem(ItemId),
    #[error("the ordering does not cover exactly the items of the graph")]
    DomainMismatch,
    #[error("buyer `{buyer}` has {private} items no other buyer can use but demand {demand}")]
    PrivateExceedsDemand {
        buyer: BuyerId,
        private: usize,
        demand: u32,
    },
    #[error("{size} items are shared by exactly buyers {pair:?}, more than their combined demand {bound}")]
    ClassTooLarge {
        pair: (BuyerId, BuyerId),
        size: usize,
        bound: u32,
    },
    #[error("{0} items are adjacent to no buyer")]
    Unreachable(usize),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("inconsistent set structure: {0}")]
    Internal(String),
}

/// A bijection from items to ranks `1..=|S|`, stored as the item sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemOrdering {
    items: Vec<ItemId>,
}

impl ItemOrdering {
    pub fn new(items: Vec<ItemId>) -> Result<Self, OrderError> {
        let mut seen = BTreeSet::new();
        for s in &items {
            if !seen.insert(s) {
                return Err(OrderError::DuplicateItem(s.clone()));
            }
        }
        Ok(ItemOrdering { items })
    }

    /// The graph's own item order.
    pub fn identity(g: &BipartiteGraph) -> Self {
        ItemOrdering {
            items: g.items().to_vec(),
        }
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// One-based rank.
    pub fn rank(&self, item: &ItemId) -> Option<usize> {
        self.items.iter().position(|s| s == item).map(|p| p + 1)
    }

    pub fn reversed(&self) -> Self {
        ItemOrdering {
            items: self.items.iter().rev().cloned().collect(),
        }
    }

    /// Ranks indexed by the graph's item indices.
    pub fn ranks_in(&self, g: &BipartiteGraph) -> Result<Vec<usize>, OrderError> {
        if self.items.len() != g.n_items() {
            return Err(OrderError::DomainMismatch);
        }
        let pos: HashMap<&ItemId, usize> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, s)| (s, i + 1))
            .collect();
        g.items()
            .iter()
            .map(|s| pos.get(s).copied().ok_or(OrderError::DomainMismatch))
            .collect()
    }
}

/// Which branch of the bi-demand construction ran at one recursion level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum CaseKind {
    /// At most one buyer.
    Base,
    /// Every non-empty proper buyer set has surplus at least two.
    Slack,
    /// Some proper buyer set has surplus zero; the graph splits.
    Split { part: Vec<BuyerId> },
    /// No dangerous set is disjoint from the maximal dangerous set `z`.
    Absorb { z: Vec<BuyerId>, s0: ItemId },
    /// A minimal dangerous set `x` disjoint from `z` in which every pair is feasible.
    Detach {
        z: Vec<BuyerId>,
        x: Vec<BuyerId>,
        s0: ItemId,
    },
    /// Buyer `t0` in `x` has the infeasible pair `{s1, s2}`; `s2` goes last.
    Bridge {
        z: Vec<BuyerId>,
        x: Vec<BuyerId>,
        t0: BuyerId,
        s1: ItemId,
        s2: ItemId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseStep {
    pub depth: usize,
    pub buyers: Vec<BuyerId>,
    #[serde(flatten)]
    pub kind: CaseKind,
}

/// Orders items by `π` non-decreasing, ties broken by `sigma`.
pub fn combine(
    g: &BipartiteGraph,
    pi: &Covering,
    sigma: &ItemOrdering,
) -> Result<ItemOrdering, OrderError> {
    let ranks = sigma.ranks_in(g)?;
    if pi.item.len() != g.n_items() {
        return Err(OrderError::DomainMismatch);
    }
    let mut idx: Vec<usize> = (0..g.n_items()).collect();
    idx.sort_by(|&a, &b| pi.item[a].cmp(&pi.item[b]).then(ranks[a].cmp(&ranks[b])));
    Ok(ItemOrdering {
        items: idx.into_iter().map(|s| g.items()[s].clone()).collect(),
    })
}

/// The first `b(t)` neighbors of `buyer` under the ranks, or `None` when the
/// buyer has fewer neighbors than its demand.
pub fn first_choices(g: &BipartiteGraph, ranks: &[usize], buyer: usize) -> Option<BTreeSet<usize>> {
    let mut ns = g.neighbors(buyer);
    ns.sort_by_key(|&s| ranks[s]);
    let b = g.capacity(buyer) as usize;
    (ns.len() >= b).then(|| ns.into_iter().take(b).collect())
}

/// Whether every buyer's first `b(t)` neighbors extend to a b-factor.
pub fn verify_adequate(g: &BipartiteGraph, sigma: &ItemOrdering) -> Result<bool, OrderError> {
    let ranks = sigma.ranks_in(g)?;
    for t in 0..g.n_buyers() {
        let Some(first) = first_choices(g, &ranks, t) else {
            return Ok(false);
        };
        if !feasible_bundle(g, t, &first)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn require_factor(g: &BipartiteGraph) -> Result<(), OrderError> {
    if bfactor_exists(g).exists() {
        Ok(())
    } else {
        Err(OrderError::NoFactor)
    }
}

fn ids(g: &BipartiteGraph, items: impl IntoIterator<Item = usize>) -> Vec<ItemId> {
    items.into_iter().map(|s| g.items()[s].clone()).collect()
}

fn buyer_ids(g: &BipartiteGraph, buyers: &[usize]) -> Vec<BuyerId> {
    buyers.iter().map(|&t| g.buyers()[t].clone()).collect()
}

/// Two buyers: items adjacent to exactly one buyer first, shared items last.
pub fn adequate_two_buyers(g: &BipartiteGraph) -> Result<ItemOrdering, OrderError> {
    if g.n_buyers() != 2 {
        return Err(OrderError::BuyerCount {
            expected: 2,
            found: g.n_buyers(),
        });
    }
    require_factor(g)?;
    let (own, shared): (Vec<usize>, Vec<usize>) =
        (0..g.n_items()).partition(|&s| g.buyers_of(s).len() == 1);
    Ok(ItemOrdering {
        items: ids(g, own.into_iter().chain(shared)),
    })
}

/// Labels of the three-buyer construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Labeling3 {
    /// Items adjacent to a single buyer; they open the ordering.
    pub prefix: Vec<ItemId>,
    /// Buyers sorted by reduced demand, largest first (roles 1, 2, 3).
    pub roles: [BuyerId; 3],
    /// Demands after removing the single-buyer items, by role.
    pub reduced_demand: [u32; 3],
    /// Label in `1..=5` of every item outside the prefix.
    pub theta: BTreeMap<ItemId, u8>,
}

/// Computes the three-buyer labeling of a graph with a b-factor whose every
/// edge is legal.
pub fn labeling_3(g: &BipartiteGraph) -> Result<Labeling3, OrderError> {
    let classes = legal_classes_3(g)?;
    if !classes.by_mask(0).is_empty() {
        return Err(OrderError::Unreachable(classes.by_mask(0).len()));
    }
    let mut reduced = [0u32; 3];
    let mut prefix = Vec::new();
    for t in 0..3 {
        let private = classes.get(&[t]);
        if private.len() > g.capacity(t) as usize {
            return Err(OrderError::PrivateExceedsDemand {
                buyer: g.buyers()[t].clone(),
                private: private.len(),
                demand: g.capacity(t),
            });
        }
        reduced[t] = g.capacity(t) - private.len() as u32;
        prefix.extend_from_slice(private);
    }
    prefix.sort_unstable();

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| reduced[b].cmp(&reduced[a]).then(a.cmp(&b)));
    let b: [u32; 3] = [reduced[order[0]], reduced[order[1]], reduced[order[2]]];

    let mut theta = BTreeMap::new();
    // (role i, role j, middle label) with i < j.
    for (i, j, mid) in [(0usize, 1usize, 3u8), (0, 2, 2), (1, 2, 2)] {
        let class = classes.get(&[order[i], order[j]]);
        let n = class.len();
        let bound = b[i] + b[j];
        if n > bound as usize {
            return Err(OrderError::ClassTooLarge {
                pair: (g.buyers()[order[i]].clone(), g.buyers()[order[j]].clone()),
                size: n,
                bound,
            });
        }
        let fours = n.min(b[j] as usize);
        let mids = n.min(b[i] as usize) - fours;
        let ones = n - fours - mids;
        for (k, &s) in class.iter().enumerate() {
            let label = if k < ones {
                1
            } else if k < ones + mids {
                mid
            } else {
                4
            };
            theta.insert(g.items()[s].clone(), label);
        }
    }
    for &s in classes.get(&[0, 1, 2]) {
        theta.insert(g.items()[s].clone(), 5);
    }
    Ok(Labeling3 {
        prefix: ids(g, prefix),
        roles: order.map(|t| g.buyers()[t].clone()),
        reduced_demand: b,
        theta,
    })
}

/// At most three buyers with arbitrary demands. The graph must have a
/// b-factor and every edge must be legal.
pub fn adequate_three_buyers(g: &BipartiteGraph) -> Result<ItemOrdering, OrderError> {
    match g.n_buyers() {
        0 | 1 => return Ok(ItemOrdering::identity(g)),
        2 => return adequate_two_buyers(g),
        3 => {}
        n => return Err(OrderError::TooManyBuyers { max: 3, found: n }),
    }
    require_factor(g)?;
    let lab = labeling_3(g)?;
    let mut rest: Vec<(u8, usize)> = (0..g.n_items())
        .filter_map(|s| lab.theta.get(&g.items()[s]).map(|&l| (l, s)))
        .collect();
    rest.sort_unstable();
    let mut items = lab.prefix;
    items.extend(rest.into_iter().map(|(_, s)| g.items()[s].clone()));
    ItemOrdering::new(items)
}

/// Demands at most two, any number of buyers; `h` must have a b-factor.
pub fn adequate_bidemand(h: &BipartiteGraph) -> Result<ItemOrdering, OrderError> {
    adequate_bidemand_traced(h).map(|(o, _)| o)
}

/// [`adequate_bidemand`] together with the branch taken at every recursion
/// level, in visiting order.
pub fn adequate_bidemand_traced(
    h: &BipartiteGraph,
) -> Result<(ItemOrdering, Vec<CaseStep>), OrderError> {
    for t in 0..h.n_buyers() {
        if h.capacity(t) > 2 {
            return Err(OrderError::DemandTooLarge {
                buyer: h.buyers()[t].clone(),
                demand: h.capacity(t),
                max: 2,
            });
        }
    }
    require_factor(h)?;
    let mut trace = Vec::new();
    let items = bidemand(h, 0, &mut trace)?;
    Ok((ItemOrdering::new(items)?, trace))
}

/// Restricts `h` to its legal edges under unit weights, orders that graph and
/// re-sorts by the unit dual so the result is adequate for `h` itself.
fn bidemand(
    h: &BipartiteGraph,
    depth: usize,
    trace: &mut Vec<CaseStep>,
) -> Result<Vec<ItemId>, OrderError> {
    if h.n_buyers() <= 1 {
        trace.push(CaseStep {
            depth,
            buyers: h.buyers().to_vec(),
            kind: CaseKind::Base,
        });
        return Ok(h.items().to_vec());
    }
    let unit = h.with_unit_weights();
    let sc = refine_covering(&unit)?;
    let legal = tight_subgraph(&sc, &unit);
    let core = ItemOrdering::new(bidemand_legal(&legal, depth, trace)?)?;
    Ok(combine(h, &sc.pi, &core)?.items)
}

fn bidemand_legal(
    h: &BipartiteGraph,
    depth: usize,
    trace: &mut Vec<CaseStep>,
) -> Result<Vec<ItemId>, OrderError> {
    let all_buyers: Vec<usize> = (0..h.n_buyers()).collect();
    let mut step = |kind| {
        trace.push(CaseStep {
            depth,
            buyers: h.buyers().to_vec(),
            kind,
        })
    };
    let (y, surplus) =
        sets::min_surplus_set(h, &SurplusQuery::default()).ok_or(OrderError::NoFactor)?;
    if surplus < 0 {
        return Err(OrderError::NoFactor);
    }
    if surplus >= 2 {
        step(CaseKind::Slack);
        return Ok(h.items().to_vec());
    }
    if surplus == 0 {
        step(CaseKind::Split {
            part: buyer_ids(h, &y),
        });
        let ny = h.neighborhood(&y);
        let in_items: Vec<bool> = (0..h.n_items()).map(|s| ny.contains(&s)).collect();
        let in_buyers: Vec<bool> = (0..h.n_buyers()).map(|t| y.contains(&t)).collect();
        let out_items: Vec<bool> = in_items.iter().map(|k| !k).collect();
        let out_buyers: Vec<bool> = in_buyers.iter().map(|k| !k).collect();
        let mut items = bidemand(&h.induced(&in_items, &in_buyers), depth + 1, trace)?;
        items.extend(bidemand(
            &h.induced(&out_items, &out_buyers),
            depth + 1,
            trace,
        )?);
        return Ok(items);
    }

    let z = sets::maximal_dangerous_set(h)?
        .ok_or_else(|| OrderError::Internal("surplus one without a dangerous set".into()))?;
    let nz = h.neighborhood(&z);
    let Some(x) = sets::minimal_dangerous_disjoint(h, &z) else {
        let (_, s0) = shared_neighbor(h, &z, &nz)?;
        step(CaseKind::Absorb {
            z: buyer_ids(h, &z),
            s0: h.items()[s0].clone(),
        });
        let mut items = ids(h, (0..h.n_items()).filter(|s| !nz.contains(s)));
        let keep_items: Vec<bool> = (0..h.n_items())
            .map(|s| nz.contains(&s) && s != s0)
            .collect();
        let keep_buyers: Vec<bool> = (0..h.n_buyers()).map(|t| z.contains(&t)).collect();
        items.extend(bidemand(
            &h.induced(&keep_items, &keep_buyers),
            depth + 1,
            trace,
        )?);
        items.push(h.items()[s0].clone());
        return Ok(items);
    };

    let nx = h.neighborhood(&x);
    let without_x = |keep: usize| {
        let items: Vec<bool> = (0..h.n_items())
            .map(|s| !nx.contains(&s) || s == keep)
            .collect();
        let buyers: Vec<bool> = (0..h.n_buyers()).map(|t| !x.contains(&t)).collect();
        h.induced(&items, &buyers)
    };
    match infeasible_pair(h, &x)? {
        None => {
            let (_, s0) = shared_neighbor(h, &x, &nx)?;
            step(CaseKind::Detach {
                z: buyer_ids(h, &z),
                x: buyer_ids(h, &x),
                s0: h.items()[s0].clone(),
            });
            let mut items = bidemand(&without_x(s0), depth + 1, trace)?;
            items.extend(ids(h, nx.iter().copied().filter(|&s| s != s0)));
            Ok(items)
        }
        Some((t0, a, b)) => {
            let union: BTreeSet<usize> = x.iter().chain(&z).copied().collect();
            let common: Vec<usize> = nx.intersection(&nz).copied().collect();
            if union.len() != all_buyers.len() || common != [a, b] {
                return Err(OrderError::Internal(format!(
                    "infeasible pair {:?} of buyer {t0} is not the common neighborhood {common:?}",
                    (a, b)
                )));
            }
            let (s1, s2) = if bfactor_exists(&without_x(a)).exists() {
                (a, b)
            } else {
                (b, a)
            };
            step(CaseKind::Bridge {
                z: buyer_ids(h, &z),
                x: buyer_ids(h, &x),
                t0: h.buyers()[t0].clone(),
                s1: h.items()[s1].clone(),
                s2: h.items()[s2].clone(),
            });
            let mut items = bidemand(&without_x(s1), depth + 1, trace)?;
            items.extend(ids(h, nx.iter().copied().filter(|&s| s != s1 && s != s2)));
            items.push(h.items()[s2].clone());
            Ok(items)
        }
    }
}

/// Lowest buyer outside `group` adjacent to `ng`, and its lowest item in `ng`.
fn shared_neighbor(
    h: &BipartiteGraph,
    group: &[usize],
    ng: &BTreeSet<usize>,
) -> Result<(usize, usize), OrderError> {
    (0..h.n_buyers())
        .filter(|t| !group.contains(t))
        .find_map(|t| {
            h.neighbors(t)
                .into_iter()
                .find(|s| ng.contains(s))
                .map(|s| (t, s))
        })
        .ok_or_else(|| {
            OrderError::Internal("dangerous set shares no item with the other buyers".into())
        })
}

/// First buyer of `x` (with demand two) owning a neighbor pair that is not
/// feasible, with that pair.
fn infeasible_pair(
    h: &BipartiteGraph,
    x: &[usize],
) -> Result<Option<(usize, usize, usize)>, OrderError> {
    for &t in x {
        if h.capacity(t) != 2 {
            continue;
        }
        let ns = h.neighbors(t);
        for (i, &a) in ns.iter().enumerate() {
            for &b in &ns[i + 1..] {
                if !feasible_bundle(h, t, &BTreeSet::from([a, b]))? {
                    return Ok(Some((t, a, b)));
                }
            }
        }
    }
    Ok(None)
}
