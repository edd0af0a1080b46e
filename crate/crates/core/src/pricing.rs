//! One round of posted prices.
//!
//! Unit-demand markets are priced at the refined dual values of the items.
//! Multi-demand markets add a small ordering-dependent markup so that every
//! buyer's unique best bundle is its first `b(t)` tight items under an
//! adequate ordering. Items outside the trimmed market get a price above
//! every value so that nobody takes them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::dual::{refine_covering, tight_subgraph, DualError, Slack};
use crate::matching::BipartiteGraph;
use crate::model::{check_opt_property, trim_items, BuyerId, ItemId, Market};
use crate::ordering::{adequate_bidemand, adequate_three_buyers, ItemOrdering, OrderError};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PricingError {
    #[error("buyer `{0}` does not have unit demand")]
    NotUnitDemand(BuyerId),
    #[error("buyer `{0}` can be left short in some optimal allocation")]
    OptViolated(BuyerId),
    #[error("no adequate-ordering construction applies to {buyers} buyers with maximum demand {max_demand}")]
    Unsupported { buyers: usize, max_demand: u32 },
    #[error("the refined covering has infinite slack on a non-empty market")]
    InfiniteSlack,
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Order(#[from] OrderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PricingMode {
    Unit,
    Multi,
}

impl FromStr for PricingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(PricingMode::Unit),
            "multi" => Ok(PricingMode::Multi),
            other => Err(format!(
                "unknown mode `{other}`, expected `unit` or `multi`"
            )),
        }
    }
}

impl fmt::Display for PricingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PricingMode::Unit => "unit",
            PricingMode::Multi => "multi",
        })
    }
}

/// How the multi-demand ordering is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingPolicy {
    /// Bi-demand construction when every demand is at most two, otherwise the
    /// three-buyer construction when there are at most three buyers.
    #[default]
    Auto,
    ThreeBuyer,
    BiDemand,
    /// The reverse of the automatic ordering. Only useful as a control.
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PriceVector {
    pub price: BTreeMap<ItemId, Rational>,
    /// Per-rank markup; zero in unit mode.
    pub delta: Rational,
    /// Items outside the trimmed market, priced above every value.
    pub blocked: BTreeSet<ItemId>,
}

impl PriceVector {
    pub fn get(&self, item: &ItemId) -> Option<&Rational> {
        self.price.get(item)
    }
}

/// Prices together with the dual and ordering they were derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PricedRound {
    pub prices: PriceVector,
    pub pi_items: BTreeMap<ItemId, Rational>,
    pub pi_buyers: BTreeMap<BuyerId, Rational>,
    pub sigma: Option<ItemOrdering>,
    pub slack: Slack,
}

fn ordering_for(h: &BipartiteGraph, policy: OrderingPolicy) -> Result<ItemOrdering, PricingError> {
    let max_demand = h.capacities().iter().copied().max().unwrap_or(0);
    let unsupported = PricingError::Unsupported {
        buyers: h.n_buyers(),
        max_demand,
    };
    Ok(match policy {
        OrderingPolicy::Auto => {
            if max_demand <= 2 {
                adequate_bidemand(h)?
            } else if h.n_buyers() <= 3 {
                adequate_three_buyers(h)?
            } else {
                return Err(unsupported);
            }
        }
        OrderingPolicy::ThreeBuyer => adequate_three_buyers(h)?,
        OrderingPolicy::BiDemand => adequate_bidemand(h)?,
        OrderingPolicy::Reversed => ordering_for(h, OrderingPolicy::Auto)?.reversed(),
    })
}

/// Prices one round of `m` in the given mode.
pub fn price_round(
    m: &Market,
    mode: PricingMode,
    policy: OrderingPolicy,
) -> Result<PricedRound, PricingError> {
    if mode == PricingMode::Unit {
        if let Some(t) = (0..m.n_buyers()).find(|&t| m.demand(t) != 1) {
            return Err(PricingError::NotUnitDemand(m.buyers()[t].clone()));
        }
    }
    let (trimmed, blocked) = trim_items(m);
    if mode == PricingMode::Multi {
        let report = check_opt_property(&trimmed);
        if let Some((t, _)) = report.witness {
            return Err(PricingError::OptViolated(t));
        }
    }
    let g = BipartiteGraph::from_market(&trimmed);
    let sc = refine_covering(&g)?;

    let (sigma, delta) = match mode {
        PricingMode::Unit => (None, Rational::zero()),
        PricingMode::Multi => {
            let h = tight_subgraph(&sc, &g);
            let sigma = ordering_for(&h, policy)?;
            let delta = match &sc.slack {
                Slack::Finite(d) => d / &Rational::from_integer(g.n_items() as i64 + 1),
                Slack::Infinite if g.n_items() == 0 => Rational::zero(),
                Slack::Infinite => return Err(PricingError::InfiniteSlack),
            };
            (Some(sigma), delta)
        }
    };

    let mut price = BTreeMap::new();
    for (s, item) in g.items().iter().enumerate() {
        let mut p = sc.pi.item[s].clone();
        if let Some(sigma) = &sigma {
            let rank = sigma.rank(item).expect("ordering covers the trimmed items");
            p += &delta.scale(rank as u64);
        }
        price.insert(item.clone(), p);
    }
    let block = &m.max_value() + &Rational::one();
    for item in &blocked {
        price.insert(item.clone(), block.clone());
    }
    Ok(PricedRound {
        prices: PriceVector {
            price,
            delta,
            blocked,
        },
        pi_items: g
            .items()
            .iter()
            .cloned()
            .zip(sc.pi.item.iter().cloned())
            .collect(),
        pi_buyers: g
            .buyers()
            .iter()
            .cloned()
            .zip(sc.pi.buyer.iter().cloned())
            .collect(),
        sigma,
        slack: sc.slack,
    })
}

/// Unit-demand prices: the refined dual value of every item.
pub fn round_prices_unit(m: &Market) -> Result<PriceVector, PricingError> {
    Ok(price_round(m, PricingMode::Unit, OrderingPolicy::Auto)?.prices)
}

/// Multi-demand prices `π(s) + δ·σ(s)` with `δ = Δ(π)/(|S|+1)`.
pub fn round_prices_multi(m: &Market, policy: OrderingPolicy) -> Result<PriceVector, PricingError> {
    Ok(price_round(m, PricingMode::Multi, policy)?.prices)
}

/// `v_t(s) − p(s)` for every item, in market order.
pub fn utilities(m: &Market, buyer: usize, p: &PriceVector) -> Vec<Rational> {
    m.items()
        .iter()
        .enumerate()
        .map(|(s, item)| m.value(buyer, s) - p.get(item).expect("every item is priced"))
        .collect()
}
