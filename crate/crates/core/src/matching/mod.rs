//! Exact maximum weight b-matching with optimal non-negative coverings.
//!
//! Items have capacity one and buyers carry their demand as capacity. The
//! solver expands every buyer into `capacity` unit copies sharing its edges,
//! runs a primal-dual assignment on the expansion and folds the copy labels
//! back into one dual value per buyer.

mod flow;
mod hungarian;

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Allocation, BuyerId, ItemId, Market};
use crate::rational::Rational;

pub(crate) use flow::{FlowNetwork, INF};
use hungarian::{DualWeight, Lex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchingError {
    #[error("edge index {0} is not in the graph")]
    UnknownEdge(usize),
    #[error("no edge between item `{0}` and buyer `{1}`")]
    NoSuchEdge(ItemId, BuyerId),
    #[error("vertex {0:?} is not in the graph")]
    UnknownVertex(Vertex),
    #[error("edge ({item}, {buyer}) is listed twice")]
    DuplicateEdge { item: usize, buyer: usize },
    #[error("edge ({item}, {buyer}) has negative weight")]
    NegativeWeight { item: usize, buyer: usize },
    #[error("{buyers} buyers but {capacities} capacities")]
    CapacityCount { buyers: usize, capacities: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Vertex {
    Item(usize),
    Buyer(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub item: usize,
    pub buyer: usize,
    pub weight: Rational,
}

/// Bipartite graph between items (capacity one) and buyers (capacity = demand).
/// Edges are kept sorted by `(item, buyer)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipartiteGraph {
    items: Vec<ItemId>,
    buyers: Vec<BuyerId>,
    capacity: Vec<u32>,
    edges: Vec<Edge>,
    lookup: Vec<Option<usize>>,
}

impl BipartiteGraph {
    pub fn new(
        items: Vec<ItemId>,
        buyers: Vec<BuyerId>,
        capacity: Vec<u32>,
        edges: Vec<Edge>,
    ) -> Result<Self, MatchingError> {
        if capacity.len() != buyers.len() {
            return Err(MatchingError::CapacityCount {
                buyers: buyers.len(),
                capacities: capacity.len(),
            });
        }
        for e in &edges {
            if e.item >= items.len() {
                return Err(MatchingError::UnknownVertex(Vertex::Item(e.item)));
            }
            if e.buyer >= buyers.len() {
                return Err(MatchingError::UnknownVertex(Vertex::Buyer(e.buyer)));
            }
            if e.weight.is_negative() {
                return Err(MatchingError::NegativeWeight {
                    item: e.item,
                    buyer: e.buyer,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if !seen.insert((e.item, e.buyer)) {
                return Err(MatchingError::DuplicateEdge {
                    item: e.item,
                    buyer: e.buyer,
                });
            }
        }
        Ok(Self::assemble(items, buyers, capacity, edges))
    }

    fn assemble(
        items: Vec<ItemId>,
        buyers: Vec<BuyerId>,
        capacity: Vec<u32>,
        mut edges: Vec<Edge>,
    ) -> Self {
        edges.sort_by_key(|e| (e.item, e.buyer));
        let nb = buyers.len();
        let mut lookup = vec![None; items.len() * nb];
        for (i, e) in edges.iter().enumerate() {
            lookup[e.item * nb + e.buyer] = Some(i);
        }
        BipartiteGraph {
            items,
            buyers,
            capacity,
            edges,
            lookup,
        }
    }

    /// The complete weighted graph of a market: `w(st) = v_t(s)` for every pair,
    /// zero values included.
    pub fn from_market(m: &Market) -> Self {
        let mut edges = Vec::with_capacity(m.n_items() * m.n_buyers());
        for s in 0..m.n_items() {
            for t in 0..m.n_buyers() {
                edges.push(Edge {
                    item: s,
                    buyer: t,
                    weight: m.value(t, s).clone(),
                });
            }
        }
        Self::assemble(
            m.items().to_vec(),
            m.buyers().to_vec(),
            m.demands().to_vec(),
            edges,
        )
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn buyers(&self) -> &[BuyerId] {
        &self.buyers
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn capacity(&self, buyer: usize) -> u32 {
        self.capacity[buyer]
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacity
    }

    /// Capacity of any vertex; items always have capacity one.
    pub fn vertex_capacity(&self, v: Vertex) -> u32 {
        match v {
            Vertex::Item(_) => 1,
            Vertex::Buyer(t) => self.capacity[t],
        }
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacity.iter().map(|&c| c as u64).sum()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn edge_between(&self, item: usize, buyer: usize) -> Option<usize> {
        self.lookup[item * self.buyers.len() + buyer]
    }

    pub fn edge_by_ids(&self, item: &ItemId, buyer: &BuyerId) -> Result<usize, MatchingError> {
        let s = self.item_index(item);
        let t = self.buyer_index(buyer);
        s.zip(t)
            .and_then(|(s, t)| self.edge_between(s, t))
            .ok_or_else(|| MatchingError::NoSuchEdge(item.clone(), buyer.clone()))
    }

    pub fn item_index(&self, id: &ItemId) -> Option<usize> {
        self.items.iter().position(|s| s == id)
    }

    pub fn buyer_index(&self, id: &BuyerId) -> Option<usize> {
        self.buyers.iter().position(|t| t == id)
    }

    pub fn has_vertex(&self, v: Vertex) -> bool {
        match v {
            Vertex::Item(s) => s < self.items.len(),
            Vertex::Buyer(t) => t < self.buyers.len(),
        }
    }

    /// Vertices in the canonical order: items first, then buyers.
    pub fn vertices(&self) -> impl Iterator<Item = Vertex> {
        (0..self.items.len())
            .map(Vertex::Item)
            .chain((0..self.buyers.len()).map(Vertex::Buyer))
    }

    pub fn incident(&self, v: Vertex) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter_map(move |(i, e)| {
            let hit = match v {
                Vertex::Item(s) => e.item == s,
                Vertex::Buyer(t) => e.buyer == t,
            };
            hit.then_some(i)
        })
    }

    /// Items adjacent to `buyer`, in item order.
    pub fn neighbors(&self, buyer: usize) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&s| self.edge_between(s, buyer).is_some())
            .collect()
    }

    /// Buyers adjacent to `item`, in buyer order.
    pub fn buyers_of(&self, item: usize) -> Vec<usize> {
        (0..self.buyers.len())
            .filter(|&t| self.edge_between(item, t).is_some())
            .collect()
    }

    /// Items adjacent to at least one buyer of the set.
    pub fn neighborhood(&self, buyers: &[usize]) -> BTreeSet<usize> {
        buyers.iter().flat_map(|&t| self.neighbors(t)).collect()
    }

    /// Same vertices, only the edges accepted by `keep`.
    pub fn with_edges(&self, keep: impl Fn(usize) -> bool) -> Self {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, e)| e.clone())
            .collect();
        Self::assemble(
            self.items.clone(),
            self.buyers.clone(),
            self.capacity.clone(),
            edges,
        )
    }

    /// Same structure with every weight set to one.
    pub fn with_unit_weights(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.weight = Rational::one();
        }
        g
    }

    /// The subgraph induced by the flagged items and buyers.
    pub fn induced(&self, keep_items: &[bool], keep_buyers: &[bool]) -> Self {
        let remap = |keep: &[bool]| {
            let mut next = 0;
            keep.iter()
                .map(|&k| {
                    k.then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect::<Vec<_>>()
        };
        let item_map = remap(keep_items);
        let buyer_map = remap(keep_buyers);
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                Some(Edge {
                    item: item_map[e.item]?,
                    buyer: buyer_map[e.buyer]?,
                    weight: e.weight.clone(),
                })
            })
            .collect();
        let pick = |n: usize, keep: &[bool]| (0..n).filter(|&i| keep[i]).collect::<Vec<_>>();
        let items = pick(self.items.len(), keep_items)
            .into_iter()
            .map(|s| self.items[s].clone())
            .collect();
        let kept_buyers = pick(self.buyers.len(), keep_buyers);
        let buyers = kept_buyers
            .iter()
            .map(|&t| self.buyers[t].clone())
            .collect();
        let capacity = kept_buyers.iter().map(|&t| self.capacity[t]).collect();
        Self::assemble(items, buyers, capacity, edges)
    }

    pub(crate) fn set_weight(&mut self, e: usize, w: Rational) {
        self.edges[e].weight = w;
    }

    pub fn allocation(&self, m: &BMatching) -> Allocation {
        let mut a = Allocation::new();
        for &e in &m.edges {
            let edge = &self.edges[e];
            a.assign(
                self.buyers[edge.buyer].clone(),
                self.items[edge.item].clone(),
            );
        }
        a
    }
}

/// A set of edges, stored as sorted edge indices of its graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BMatching {
    edges: Vec<usize>,
}

impl BMatching {
    pub fn from_edges(mut edges: Vec<usize>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        BMatching { edges }
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, e: usize) -> bool {
        self.edges.binary_search(&e).is_ok()
    }

    pub fn weight(&self, g: &BipartiteGraph) -> Rational {
        self.edges.iter().map(|&e| &g.edge(e).weight).sum()
    }

    pub fn degree(&self, g: &BipartiteGraph, v: Vertex) -> u32 {
        self.edges
            .iter()
            .filter(|&&e| match v {
                Vertex::Item(s) => g.edge(e).item == s,
                Vertex::Buyer(t) => g.edge(e).buyer == t,
            })
            .count() as u32
    }

    pub fn is_bmatching(&self, g: &BipartiteGraph) -> bool {
        g.vertices()
            .all(|v| self.degree(g, v) <= g.vertex_capacity(v))
    }

    pub fn is_factor(&self, g: &BipartiteGraph) -> bool {
        g.vertices()
            .all(|v| self.degree(g, v) == g.vertex_capacity(v))
    }
}

/// Non-negative dual values on items and buyers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Covering {
    pub item: Vec<Rational>,
    pub buyer: Vec<Rational>,
}

impl Covering {
    pub fn zeros(g: &BipartiteGraph) -> Self {
        Covering {
            item: vec![Rational::zero(); g.n_items()],
            buyer: vec![Rational::zero(); g.n_buyers()],
        }
    }

    pub fn get(&self, v: Vertex) -> &Rational {
        match v {
            Vertex::Item(s) => &self.item[s],
            Vertex::Buyer(t) => &self.buyer[t],
        }
    }

    pub fn get_mut(&mut self, v: Vertex) -> &mut Rational {
        match v {
            Vertex::Item(s) => &mut self.item[s],
            Vertex::Buyer(t) => &mut self.buyer[t],
        }
    }

    /// `π·b`.
    pub fn value(&self, g: &BipartiteGraph) -> Rational {
        let items: Rational = self.item.iter().sum();
        let buyers: Rational = self
            .buyer
            .iter()
            .enumerate()
            .map(|(t, p)| p.scale(g.capacity(t) as u64))
            .sum();
        items + buyers
    }

    /// `π(s) + π(t) − w(st)` for an edge.
    pub fn gap(&self, g: &BipartiteGraph, e: usize) -> Rational {
        let edge = g.edge(e);
        &(&self.item[edge.item] + &self.buyer[edge.buyer]) - &edge.weight
    }

    pub fn is_tight(&self, g: &BipartiteGraph, e: usize) -> bool {
        self.gap(g, e).is_zero()
    }

    pub fn is_feasible(&self, g: &BipartiteGraph) -> bool {
        self.item
            .iter()
            .chain(&self.buyer)
            .all(|p| !p.is_negative())
            && (0..g.edges().len()).all(|e| !self.gap(g, e).is_negative())
    }
}

/// Primal and dual optimum of one solve.
#[derive(Clone, Debug)]
pub struct Solution {
    pub matching: BMatching,
    pub weight: Rational,
    pub covering: Covering,
}

struct Expansion {
    /// Owning buyer of every copy.
    copy_owner: Vec<usize>,
    adj: Vec<Vec<(usize, usize)>>,
}

fn expand(g: &BipartiteGraph, item_open: &[bool], capacity: &[u32]) -> Expansion {
    let mut copy_owner = Vec::new();
    let mut first_copy = Vec::with_capacity(g.n_buyers());
    for (t, &c) in capacity.iter().enumerate() {
        first_copy.push(copy_owner.len());
        copy_owner.extend(std::iter::repeat_n(t, c as usize));
    }
    let mut adj = vec![Vec::new(); g.n_items()];
    for (i, e) in g.edges().iter().enumerate() {
        if !item_open[e.item] {
            continue;
        }
        for k in 0..capacity[e.buyer] as usize {
            adj[e.item].push((first_copy[e.buyer] + k, i));
        }
    }
    Expansion { copy_owner, adj }
}

fn solve_with(g: &BipartiteGraph, item_open: &[bool], capacity: &[u32]) -> Solution {
    let ex = expand(g, item_open, capacity);
    let adj: Vec<Vec<(usize, Rational)>> = ex
        .adj
        .iter()
        .map(|row| {
            row.iter()
                .map(|&(k, e)| (k, g.edge(e).weight.clone()))
                .collect()
        })
        .collect();
    let a = hungarian::solve(ex.copy_owner.len(), &adj);

    let mut edges = Vec::new();
    for (s, mate) in a.mate_left.iter().enumerate() {
        if let Some(k) = mate {
            let t = ex.copy_owner[*k];
            edges.push(g.edge_between(s, t).expect("expanded edge exists"));
        }
    }
    let matching = BMatching::from_edges(edges);
    let weight = matching.weight(g);

    let mut covering = Covering {
        item: a.label_left,
        buyer: vec![Rational::zero(); g.n_buyers()],
    };
    for (k, label) in a.label_right.into_iter().enumerate() {
        let t = ex.copy_owner[k];
        let first = ex.copy_owner.iter().position(|&o| o == t) == Some(k);
        if first || label < covering.buyer[t] {
            covering.buyer[t] = label;
        }
    }
    // Buyers without copies contribute nothing to π·b; lift them just enough
    // to cover their edges.
    for t in (0..g.n_buyers()).filter(|&t| capacity[t] == 0) {
        let mut need = Rational::zero();
        for e in g.incident(Vertex::Buyer(t)) {
            let edge = g.edge(e);
            let gap = &edge.weight - &covering.item[edge.item];
            need = need.max(gap);
        }
        covering.buyer[t] = need;
    }
    // Closed items never enter the expansion; same treatment.
    for s in (0..g.n_items()).filter(|&s| !item_open[s]) {
        let mut need = Rational::zero();
        for e in g.incident(Vertex::Item(s)) {
            let edge = g.edge(e);
            need = need.max(&edge.weight - &covering.buyer[edge.buyer]);
        }
        covering.item[s] = need;
    }
    Solution {
        matching,
        weight,
        covering,
    }
}

/// Solves for a maximum weight b-matching and an optimal covering at once.
pub fn solve(g: &BipartiteGraph) -> Solution {
    solve_with(g, &vec![true; g.n_items()], g.capacities())
}

pub fn max_weight_bmatching(g: &BipartiteGraph) -> (BMatching, Rational) {
    let sol = solve(g);
    (sol.matching, sol.weight)
}

/// A minimum total value non-negative covering; its value equals the
/// maximum b-matching weight.
pub fn optimal_covering(g: &BipartiteGraph) -> Covering {
    solve(g).covering
}

/// Optimum with the capacity of `v` lowered by one, as a matching of `g`.
pub fn solve_reduced_capacity(g: &BipartiteGraph, v: Vertex) -> (BMatching, Rational) {
    let mut open = vec![true; g.n_items()];
    let mut cap = g.capacities().to_vec();
    match v {
        Vertex::Item(s) => open[s] = false,
        Vertex::Buyer(t) => cap[t] = cap[t].saturating_sub(1),
    }
    let sol = solve_with(g, &open, &cap);
    (sol.matching, sol.weight)
}

pub fn max_weight_reduced_capacity(
    g: &BipartiteGraph,
    v: Vertex,
) -> Result<Rational, MatchingError> {
    if !g.has_vertex(v) {
        return Err(MatchingError::UnknownVertex(v));
    }
    Ok(solve_reduced_capacity(g, v).1)
}

/// Maximum weight over b-matchings that contain edge `e`: capacity of both
/// endpoints lowered by one, plus `w(e)`.
pub fn max_weight_forced_edge(g: &BipartiteGraph, e: usize) -> Result<Rational, MatchingError> {
    let edge = g.edges().get(e).ok_or(MatchingError::UnknownEdge(e))?;
    let mut open = vec![true; g.n_items()];
    open[edge.item] = false;
    let mut cap = g.capacities().to_vec();
    cap[edge.buyer] = cap[edge.buyer].saturating_sub(1);
    Ok(&solve_with(g, &open, &cap).weight + &edge.weight)
}

/// A maximum weight b-matching with the fewest edges among all maximum
/// weight ones (lexicographic objective).
pub fn min_cardinality_optimum(g: &BipartiteGraph) -> BMatching {
    let ex = expand(g, &vec![true; g.n_items()], g.capacities());
    let adj: Vec<Vec<(usize, Lex)>> = ex
        .adj
        .iter()
        .map(|row| {
            row.iter()
                .map(|&(k, e)| (k, Lex(g.edge(e).weight.clone(), -1)))
                .collect()
        })
        .collect();
    let a = hungarian::solve(ex.copy_owner.len(), &adj);
    debug_assert!(a.label_left.iter().all(|l| *l >= Lex::zero()));
    let edges = a
        .mate_left
        .iter()
        .enumerate()
        .filter_map(|(s, m)| {
            m.map(|k| {
                g.edge_between(s, ex.copy_owner[k])
                    .expect("expanded edge exists")
            })
        })
        .collect();
    BMatching::from_edges(edges)
}

/// Outcome of a b-factor existence test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FactorCheck {
    Factor(BMatching),
    /// `|S| ≠ b(T)`.
    SizeMismatch {
        items: usize,
        demand: u64,
    },
    /// Buyers `Y` with `|N(Y)| < b(Y)`.
    Deficient(Vec<usize>),
}

impl FactorCheck {
    pub fn exists(&self) -> bool {
        matches!(self, FactorCheck::Factor(_))
    }
}

/// Tests for a b-factor (every item used once, every buyer filled to
/// capacity); on failure reports the size mismatch or a Hall-violating set.
pub fn bfactor_exists(g: &BipartiteGraph) -> FactorCheck {
    if g.n_items() as u64 != g.total_capacity() {
        return FactorCheck::SizeMismatch {
            items: g.n_items(),
            demand: g.total_capacity(),
        };
    }
    let nb = g.n_buyers();
    let ni = g.n_items();
    let (source, sink) = (nb + ni, nb + ni + 1);
    let mut net = FlowNetwork::new(nb + ni + 2);
    for t in 0..nb {
        net.add_arc(source, t, g.capacity(t) as i64);
    }
    let arcs: Vec<usize> = g
        .edges()
        .iter()
        .map(|e| net.add_arc(e.buyer, nb + e.item, INF))
        .collect();
    for s in 0..ni {
        net.add_arc(nb + s, sink, 1);
    }
    let flow = net.max_flow(source, sink);
    if flow as u64 == g.total_capacity() {
        let used = arcs
            .iter()
            .enumerate()
            .filter(|(_, &a)| net.residual(a) < INF)
            .map(|(e, _)| e)
            .collect();
        FactorCheck::Factor(BMatching::from_edges(used))
    } else {
        let side = net.source_side(source);
        FactorCheck::Deficient((0..nb).filter(|&t| side[t]).collect())
    }
}
