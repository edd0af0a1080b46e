//! Primal-dual maximum weight matching on a unit-capacity bipartite graph.
//!
//! Left vertices start with the largest edge weight as their label, right
//! vertices with zero. Each left vertex in turn roots an alternating tree of
//! tight edges; labels move by the smallest slack until either an augmenting
//! path appears or a tree vertex reaches label zero (it may then stay
//! unmatched). On return every free vertex has label zero, every matched edge
//! is tight and all labels are non-negative, so the labels form an optimal
//! non-negative covering.

use std::ops::{Add, Sub};

use crate::rational::Rational;

/// Weight domain of the solver: an ordered abelian group.
pub(crate) trait DualWeight: Clone + Ord {
    fn zero() -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn minus(&self, other: &Self) -> Self;
}

impl DualWeight for Rational {
    fn zero() -> Self {
        Rational::zero()
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
}

/// Lexicographic pair `(weight, tiebreak)`; used to prefer fewer edges among
/// maximum weight matchings by giving every edge tiebreak `-1`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Lex(pub Rational, pub i64);

impl Add for &Lex {
    type Output = Lex;
    fn add(self, rhs: &Lex) -> Lex {
        Lex(&self.0 + &rhs.0, self.1 + rhs.1)
    }
}

impl Sub for &Lex {
    type Output = Lex;
    fn sub(self, rhs: &Lex) -> Lex {
        Lex(&self.0 - &rhs.0, self.1 - rhs.1)
    }
}

impl DualWeight for Lex {
    fn zero() -> Self {
        Lex(Rational::zero(), 0)
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
}

pub(crate) struct Assignment<W> {
    pub mate_left: Vec<Option<usize>>,
    pub label_left: Vec<W>,
    pub label_right: Vec<W>,
}

/// `adj[x]` lists `(right vertex, weight)` pairs of left vertex `x`.
pub(crate) fn solve<W: DualWeight>(n_right: usize, adj: &[Vec<(usize, W)>]) -> Assignment<W> {
    let n_left = adj.len();
    let zero = W::zero();
    let top = adj
        .iter()
        .flatten()
        .map(|(_, w)| w)
        .max()
        .cloned()
        .map_or(zero.clone(), |m| m.max(zero.clone()));

    let mut label_l = vec![top; n_left];
    let mut label_r = vec![zero.clone(); n_right];
    let mut mate_l: Vec<Option<usize>> = vec![None; n_left];
    let mut mate_r: Vec<Option<usize>> = vec![None; n_right];

    for root in 0..n_left {
        if label_l[root] == zero {
            continue;
        }
        let mut tree_l = vec![root];
        let mut in_tree_r = vec![false; n_right];
        let mut slack: Vec<Option<W>> = vec![None; n_right];
        let mut parent = vec![usize::MAX; n_right];
        let mut frontier = vec![root];

        loop {
            for &x in &frontier {
                for (k, w) in &adj[x] {
                    if in_tree_r[*k] {
                        continue;
                    }
                    let s = label_l[x].plus(&label_r[*k]).minus(w);
                    if slack[*k].as_ref().is_none_or(|cur| s < *cur) {
                        slack[*k] = Some(s);
                        parent[*k] = x;
                    }
                }
            }
            frontier.clear();

            let mut best_r: Option<(usize, W)> = None;
            for k in 0..n_right {
                if in_tree_r[k] {
                    continue;
                }
                if let Some(s) = &slack[k] {
                    if best_r.as_ref().is_none_or(|(_, b)| s < b) {
                        best_r = Some((k, s.clone()));
                    }
                }
            }
            let (best_l, d2) = tree_l
                .iter()
                .map(|&x| (x, label_l[x].clone()))
                .min_by(|a, b| a.1.cmp(&b.1))
                .expect("tree contains the root");

            let take_edge = matches!(&best_r, Some((_, d1)) if *d1 <= d2);
            let delta = if take_edge {
                best_r.as_ref().unwrap().1.clone()
            } else {
                d2
            };
            if delta > zero {
                for &x in &tree_l {
                    label_l[x] = label_l[x].minus(&delta);
                }
                for k in 0..n_right {
                    if in_tree_r[k] {
                        label_r[k] = label_r[k].plus(&delta);
                    } else if let Some(s) = &slack[k] {
                        slack[k] = Some(s.minus(&delta));
                    }
                }
            }

            if take_edge {
                let k = best_r.unwrap().0;
                in_tree_r[k] = true;
                match mate_r[k] {
                    None => {
                        augment(k, &parent, &mut mate_l, &mut mate_r);
                        break;
                    }
                    Some(x) => {
                        tree_l.push(x);
                        frontier.push(x);
                    }
                }
            } else {
                // best_l reached label zero: it becomes the free end of the path.
                if best_l != root {
                    let k = mate_l[best_l]
                        .take()
                        .expect("non-root tree vertex is matched");
                    mate_r[k] = None;
                    augment(k, &parent, &mut mate_l, &mut mate_r);
                }
                break;
            }
        }
    }

    Assignment {
        mate_left: mate_l,
        label_left: label_l,
        label_right: label_r,
    }
}

fn augment(
    end: usize,
    parent: &[usize],
    mate_l: &mut [Option<usize>],
    mate_r: &mut [Option<usize>],
) {
    let mut k = end;
    loop {
        let x = parent[k];
        let prev = mate_l[x];
        mate_l[x] = Some(k);
        mate_r[k] = Some(x);
        match prev {
            None => break,
            Some(pk) => k = pk,
        }
    }
}
