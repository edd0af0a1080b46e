//! Market data model, welfare accounting, the saturation property check and
//! removal of items that no optimal allocation needs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{self, BipartiteGraph, Vertex};
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BuyerId(pub String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Self {
        ItemId(id.into())
    }
}

impl BuyerId {
    pub fn new(id: impl Into<String>) -> Self {
        BuyerId(id.into())
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for BuyerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        ItemId::new(s)
    }
}

impl From<&str> for BuyerId {
    fn from(s: &str) -> Self {
        BuyerId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown item `{0}`")]
    UnknownItem(ItemId),
    #[error("unknown buyer `{0}`")]
    UnknownBuyer(BuyerId),
    #[error("duplicate item `{0}`")]
    DuplicateItem(ItemId),
    #[error("duplicate buyer `{0}`")]
    DuplicateBuyer(BuyerId),
    #[error("buyer `{0}` has zero demand")]
    ZeroDemand(BuyerId),
    #[error("buyer `{buyer}` has negative value {value} for item `{item}`")]
    NegativeValue {
        buyer: BuyerId,
        item: ItemId,
        value: Rational,
    },
    #[error("buyer `{buyer}` lists {got} values for {expected} items")]
    ValueCount {
        buyer: BuyerId,
        expected: usize,
        got: usize,
    },
    #[error("item `{0}` appears in more than one bundle")]
    SharedItem(ItemId),
    #[error("bundle of buyer `{buyer}` has {size} items, demand is {demand}")]
    BundleTooLarge {
        buyer: BuyerId,
        size: usize,
        demand: u32,
    },
}

/// One buyer's data in item order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuyerSpec {
    pub id: BuyerId,
    pub demand: u32,
    pub values: Vec<Rational>,
}

/// A multi-demand market: every buyer has a value for every item and wants
/// at most `demand` items; a bundle is worth the sum of its item values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Market {
    items: Vec<ItemId>,
    buyers: Vec<BuyerId>,
    demand: Vec<u32>,
    /// `values[buyer][item]`
    values: Vec<Vec<Rational>>,
}

impl Market {
    pub fn new(items: Vec<ItemId>, buyers: Vec<BuyerSpec>) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for item in &items {
            if !seen.insert(item) {
                return Err(ModelError::DuplicateItem(item.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for b in &buyers {
            if !seen.insert(&b.id) {
                return Err(ModelError::DuplicateBuyer(b.id.clone()));
            }
            if b.demand == 0 {
                return Err(ModelError::ZeroDemand(b.id.clone()));
            }
            if b.values.len() != items.len() {
                return Err(ModelError::ValueCount {
                    buyer: b.id.clone(),
                    expected: items.len(),
                    got: b.values.len(),
                });
            }
            if let Some(pos) = b.values.iter().position(Rational::is_negative) {
                return Err(ModelError::NegativeValue {
                    buyer: b.id.clone(),
                    item: items[pos].clone(),
                    value: b.values[pos].clone(),
                });
            }
        }
        let (ids, rest): (Vec<_>, Vec<_>) = buyers
            .into_iter()
            .map(|b| (b.id, (b.demand, b.values)))
            .unzip();
        let (demand, values) = rest.into_iter().unzip();
        Ok(Market {
            items,
            buyers: ids,
            demand,
            values,
        })
    }

    /// Convenience constructor with integer values.
    pub fn from_integers(
        items: &[&str],
        buyers: &[(&str, u32, &[i64])],
    ) -> Result<Self, ModelError> {
        Market::new(
            items.iter().map(|&s| ItemId::new(s)).collect(),
            buyers
                .iter()
                .map(|(id, demand, values)| BuyerSpec {
                    id: BuyerId::new(*id),
                    demand: *demand,
                    values: values.iter().map(|&v| Rational::from_integer(v)).collect(),
                })
                .collect(),
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

    pub fn demand(&self, buyer: usize) -> u32 {
        self.demand[buyer]
    }

    pub fn demands(&self) -> &[u32] {
        &self.demand
    }

    pub fn total_demand(&self) -> u64 {
        self.demand.iter().map(|&d| d as u64).sum()
    }

    pub fn value(&self, buyer: usize, item: usize) -> &Rational {
        &self.values[buyer][item]
    }

    pub fn values_of(&self, buyer: usize) -> &[Rational] {
        &self.values[buyer]
    }

    pub fn item_index(&self, id: &ItemId) -> Option<usize> {
        self.items.iter().position(|s| s == id)
    }

    pub fn buyer_index(&self, id: &BuyerId) -> Option<usize> {
        self.buyers.iter().position(|t| t == id)
    }

    pub fn buyer_spec(&self, buyer: usize) -> BuyerSpec {
        BuyerSpec {
            id: self.buyers[buyer].clone(),
            demand: self.demand[buyer],
            values: self.values[buyer].clone(),
        }
    }

    /// Largest single value in the market (zero when empty).
    pub fn max_value(&self) -> Rational {
        self.values
            .iter()
            .flatten()
            .cloned()
            .max()
            .unwrap_or_default()
    }

    /// The market restricted to the flagged items and buyers.
    pub fn submarket(&self, keep_items: &[bool], keep_buyers: &[bool]) -> Market {
        let items = self
            .items
            .iter()
            .zip(keep_items)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        let mut buyers = Vec::new();
        let mut demand = Vec::new();
        let mut values = Vec::new();
        for t in (0..self.buyers.len()).filter(|&t| keep_buyers[t]) {
            buyers.push(self.buyers[t].clone());
            demand.push(self.demand[t]);
            values.push(
                self.values[t]
                    .iter()
                    .zip(keep_items)
                    .filter(|(_, &k)| k)
                    .map(|(v, _)| v.clone())
                    .collect(),
            );
        }
        Market {
            items,
            buyers,
            demand,
            values,
        }
    }
}

/// Buyer → bundle. Bundles are disjoint and respect demands once validated
/// against a market.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub bundles: BTreeMap<BuyerId, BTreeSet<ItemId>>,
}

impl Allocation {
    pub fn new() -> Self {
        Allocation::default()
    }

    pub fn assign(&mut self, buyer: BuyerId, item: ItemId) {
        self.bundles.entry(buyer).or_default().insert(item);
    }

    pub fn bundle(&self, buyer: &BuyerId) -> Option<&BTreeSet<ItemId>> {
        self.bundles.get(buyer)
    }

    pub fn bundle_size(&self, buyer: &BuyerId) -> usize {
        self.bundles.get(buyer).map_or(0, BTreeSet::len)
    }

    pub fn n_assigned(&self) -> usize {
        self.bundles.values().map(BTreeSet::len).sum()
    }

    pub fn items(&self) -> BTreeSet<ItemId> {
        self.bundles.values().flatten().cloned().collect()
    }

    pub fn validate(&self, m: &Market) -> Result<(), ModelError> {
        let mut used = BTreeSet::new();
        for (buyer, bundle) in &self.bundles {
            let t = m
                .buyer_index(buyer)
                .ok_or_else(|| ModelError::UnknownBuyer(buyer.clone()))?;
            if bundle.len() > m.demand(t) as usize {
                return Err(ModelError::BundleTooLarge {
                    buyer: buyer.clone(),
                    size: bundle.len(),
                    demand: m.demand(t),
                });
            }
            for item in bundle {
                m.item_index(item)
                    .ok_or_else(|| ModelError::UnknownItem(item.clone()))?;
                if !used.insert(item) {
                    return Err(ModelError::SharedItem(item.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OptReport {
    pub opt_welfare: Rational,
    pub opt_property_holds: bool,
    /// A buyer left short of its demand by some optimal allocation.
    pub witness: Option<(BuyerId, Allocation)>,
}

/// Total value of an allocation.
pub fn welfare(m: &Market, a: &Allocation) -> Result<Rational, ModelError> {
    a.validate(m)?;
    let mut total = Rational::zero();
    for (buyer, bundle) in &a.bundles {
        let t = m.buyer_index(buyer).expect("validated");
        for item in bundle {
            total += m.value(t, m.item_index(item).expect("validated"));
        }
    }
    Ok(total)
}

/// Decides whether every buyer receives exactly its demand in every optimal
/// allocation: for each buyer, lowering its demand by one must strictly lose
/// welfare.
pub fn check_opt_property(m: &Market) -> OptReport {
    let g = BipartiteGraph::from_market(m);
    let (_, opt) = matching::max_weight_bmatching(&g);
    for t in 0..m.n_buyers() {
        let (reduced, weight) = matching::solve_reduced_capacity(&g, Vertex::Buyer(t));
        if weight == opt {
            return OptReport {
                opt_welfare: opt,
                opt_property_holds: false,
                witness: Some((m.buyers()[t].clone(), g.allocation(&reduced))),
            };
        }
    }
    OptReport {
        opt_welfare: opt,
        opt_property_holds: true,
        witness: None,
    }
}

/// Restricts the market to the items of a maximum welfare allocation that
/// uses as few items as possible. Every optimal allocation of the result uses
/// all of its items. Returns the trimmed market and the removed items.
pub fn trim_items(m: &Market) -> (Market, BTreeSet<ItemId>) {
    let g = BipartiteGraph::from_market(m);
    let used = matching::min_cardinality_optimum(&g);
    let mut keep = vec![false; m.n_items()];
    for e in used.edges() {
        keep[g.edge(*e).item] = true;
    }
    let removed = m
        .items()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| !k)
        .map(|(s, _)| s.clone())
        .collect();
    (m.submarket(&keep, &vec![true; m.n_buyers()]), removed)
}

/// The market left after `departed` leaves with the `sold` items.
pub fn restrict_market(
    m: &Market,
    departed: &BuyerId,
    sold: &BTreeSet<ItemId>,
) -> Result<Market, ModelError> {
    let t = m
        .buyer_index(departed)
        .ok_or_else(|| ModelError::UnknownBuyer(departed.clone()))?;
    let mut keep_items = vec![true; m.n_items()];
    for item in sold {
        let s = m
            .item_index(item)
            .ok_or_else(|| ModelError::UnknownItem(item.clone()))?;
        keep_items[s] = false;
    }
    let mut keep_buyers = vec![true; m.n_buyers()];
    keep_buyers[t] = false;
    Ok(m.submarket(&keep_items, &keep_buyers))
}
