//! Small reference markets and graphs used throughout the tests and the CLI
//! demos.

use crate::matching::{BipartiteGraph, Edge};
use crate::model::{BuyerId, ItemId, Market};
use crate::rational::Rational;

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Builds a graph on items `s1..` and buyers `t1..` from `(item, buyer, weight)`
/// triples with zero-based indices.
pub fn graph(n_items: usize, capacity: &[u32], edges: &[(usize, usize, i64)]) -> BipartiteGraph {
    BipartiteGraph::new(
        names("s", n_items).into_iter().map(ItemId).collect(),
        names("t", capacity.len())
            .into_iter()
            .map(BuyerId)
            .collect(),
        capacity.to_vec(),
        edges
            .iter()
            .map(|&(item, buyer, w)| Edge {
                item,
                buyer,
                weight: Rational::from_integer(w),
            })
            .collect(),
    )
    .expect("fixture graph is valid")
}

/// Unit-weight graph from per-buyer neighbor lists.
pub fn unit_graph(n_items: usize, capacity: &[u32], neighbors: &[&[usize]]) -> BipartiteGraph {
    let edges: Vec<_> = neighbors
        .iter()
        .enumerate()
        .flat_map(|(t, ns)| ns.iter().map(move |&s| (s, t, 1)))
        .collect();
    graph(n_items, capacity, &edges)
}

/// Market from a value matrix `values[buyer][item]`.
pub fn market(demand: &[u32], values: &[&[i64]]) -> Market {
    let n_items = values.first().map_or(0, |v| v.len());
    let items = names("s", n_items);
    let buyers = names("t", demand.len());
    let item_refs: Vec<&str> = items.iter().map(String::as_str).collect();
    let rows: Vec<(&str, u32, &[i64])> = buyers
        .iter()
        .zip(demand)
        .zip(values)
        .map(|((b, &d), v)| (b.as_str(), d, *v))
        .collect();
    Market::from_integers(&item_refs, &rows).expect("fixture market is valid")
}

/// Two unit-demand buyers: `t1 = (3, 1)`, `t2 = (2, 2)`.
pub fn unit_pair() -> Market {
    market(&[1, 1], &[&[3, 1], &[2, 2]])
}

/// Two bi-demand buyers on four items: `t1 = (4, 4, 1, 1)`, `t2 = (3, 3, 3, 3)`.
pub fn bidemand_pair() -> Market {
    market(&[2, 2], &[&[4, 4, 1, 1], &[3, 3, 3, 3]])
}

/// Bi-demand tight graph with `N(t1) = {s1,s2,s3}`, `N(t2) = {s2..s6}`,
/// `N(t3) = {s4,s5,s6}`; the pair `{s2,s3}` is infeasible for `t1`.
pub fn dangerous_graph() -> BipartiteGraph {
    unit_graph(6, &[2, 2, 2], &[&[0, 1, 2], &[1, 2, 3, 4, 5], &[3, 4, 5]])
}

/// Weighted market whose legal edges are exactly the edges of [`dangerous_graph`].
pub fn dangerous_market() -> Market {
    market(
        &[2, 2, 2],
        &[
            &[10, 10, 10, 1, 1, 1],
            &[1, 10, 10, 10, 10, 10],
            &[1, 1, 1, 10, 10, 10],
        ],
    )
}

/// Three bi-demand buyers and six items whose maximum weight allocations are
/// exactly `M1 = {t1s1,t1s3,t2s2,t2s5,t3s4,t3s6}` and
/// `M2 = {t1s1,t1s4,t2s2,t2s3,t3s5,t3s6}`. Legal edges weigh 2, all others 1.
pub fn two_optima_market() -> Market {
    market(
        &[2, 2, 2],
        &[
            &[2, 1, 2, 2, 1, 1],
            &[1, 2, 2, 1, 2, 1],
            &[1, 1, 1, 2, 2, 2],
        ],
    )
}

/// Unit-weight graph with a planted b-factor: items are dealt to buyers in
/// order (buyer `t` owns the next `capacity[t]` items), then every
/// `extra[t][s]` flag adds the edge `(s, t)`. `|S| = b(T)` by construction.
pub fn planted_graph(capacity: &[u32], extra: &[Vec<bool>]) -> BipartiteGraph {
    let n_items = capacity.iter().sum::<u32>() as usize;
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); capacity.len()];
    let mut next = 0;
    for (t, &c) in capacity.iter().enumerate() {
        lists[t].extend(next..next + c as usize);
        next += c as usize;
    }
    for (t, row) in extra.iter().enumerate().take(capacity.len()) {
        for (s, &flag) in row.iter().enumerate().take(n_items) {
            if flag && !lists[t].contains(&s) {
                lists[t].push(s);
            }
        }
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    unit_graph(n_items, capacity, &refs)
}
