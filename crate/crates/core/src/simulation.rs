//! Buyer behavior and dynamic runs.
//!
//! A buyer facing prices takes a utility-maximizing bundle of at most its
//! demand, and may freely add or drop zero-utility items. The exhaustive
//! driver explores every arrival order together with every such choice. A
//! residual market depends only on which buyers and items remain, so states
//! are memoized on that pair and the worst welfare below each state is
//! computed once.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{restrict_market, BuyerId, ItemId, Market, ModelError};
use crate::oracle::oracle_opt_value;
use crate::pricing::{
    price_round, utilities, OrderingPolicy, PriceVector, PricedRound, PricingError, PricingMode,
};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown buyer `{0}`")]
    UnknownBuyer(BuyerId),
    #[error("arrival order is not a permutation of the buyers")]
    NotPermutation,
    #[error("markets with more than 64 buyers or items are not simulated")]
    TooLarge,
    #[error("pricing failed with buyers {remaining:?} remaining: {source}")]
    Pricing {
        remaining: Vec<BuyerId>,
        #[source]
        source: PricingError,
    },
    #[error("buyer `{buyer}` has {count} best bundles under multi-demand prices")]
    NotUnique { buyer: BuyerId, count: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Chooses among equally good bundles in a single run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    First,
    Last,
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Step {
    pub buyer: BuyerId,
    pub prices: PriceVector,
    pub bundle: BTreeSet<ItemId>,
    pub value: Rational,
    pub paid: Rational,
    /// Number of utility-maximizing bundles the buyer could choose from.
    pub choices: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunTrace {
    pub steps: Vec<Step>,
    pub final_welfare: Rational,
    pub leftover_items: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub instance: Option<String>,
    pub mode: PricingMode,
    pub runs_checked: u64,
    pub all_optimal: bool,
    /// False when a budget cut the search short or choices were sampled.
    pub complete: bool,
    pub optimum: Rational,
    pub worst_welfare: Rational,
    pub states_explored: usize,
    /// Largest number of best bundles seen at any step.
    pub max_choices: usize,
    /// Chosen bundles that no optimal allocation of the residual market extends.
    pub infeasible_steps: u64,
    pub counterexample: Option<RunTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub mode: PricingMode,
    pub policy: OrderingPolicy,
    /// Maximum number of residual markets priced by the exhaustive search.
    pub state_budget: usize,
    /// Maximum number of tied bundles followed per buyer and state; beyond it
    /// a seeded sample of this size is followed.
    pub branch_budget: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: PricingMode::Multi,
            policy: OrderingPolicy::Auto,
            state_budget: 200_000,
            branch_budget: 64,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn new(mode: PricingMode) -> Self {
        SimConfig {
            mode,
            ..SimConfig::default()
        }
    }
}

/// All `k`-element subsets of `pool`, in lexicographic order of positions.
pub fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(pool: &[usize], k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        let need = k - cur.len();
        for i in 0..pool.len() {
            if pool.len() - i < need {
                break;
            }
            cur.push(pool[i]);
            rec(&pool[i + 1..], k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(pool, k, &mut Vec::new(), &mut out);
    out
}

/// Every bundle of at most `demand` items maximizing total utility, as
/// sorted item indices.
pub fn best_bundle_indices(u: &[Rational], demand: usize) -> Vec<Vec<usize>> {
    let mut pos: Vec<usize> = (0..u.len()).filter(|&s| u[s].is_positive()).collect();
    pos.sort_by(|&a, &b| u[b].cmp(&u[a]));
    let zeros: Vec<usize> = (0..u.len()).filter(|&s| u[s].is_zero()).collect();
    let mut out = Vec::new();
    if pos.len() >= demand {
        if demand == 0 {
            return vec![Vec::new()];
        }
        let theta = &u[pos[demand - 1]];
        let must: Vec<usize> = pos.iter().copied().filter(|&s| &u[s] > theta).collect();
        let tied: Vec<usize> = pos.iter().copied().filter(|&s| &u[s] == theta).collect();
        for extra in combinations(&tied, demand - must.len()) {
            let mut b = must.clone();
            b.extend(extra);
            b.sort_unstable();
            out.push(b);
        }
    } else {
        for k in 0..=(demand - pos.len()).min(zeros.len()) {
            for extra in combinations(&zeros, k) {
                let mut b = pos.clone();
                b.extend(extra);
                b.sort_unstable();
                out.push(b);
            }
        }
    }
    out
}

/// All utility-maximizing bundles of `buyer` at prices `p`, including those
/// padded with zero-utility items and the empty bundle when nothing has
/// positive utility.
pub fn best_bundles(
    m: &Market,
    buyer: &BuyerId,
    p: &PriceVector,
) -> Result<Vec<BTreeSet<ItemId>>, SimError> {
    let t = m
        .buyer_index(buyer)
        .ok_or_else(|| SimError::UnknownBuyer(buyer.clone()))?;
    let u = utilities(m, t, p);
    Ok(best_bundle_indices(&u, m.demand(t) as usize)
        .into_iter()
        .map(|b| b.into_iter().map(|s| m.items()[s].clone()).collect())
        .collect())
}

fn bundle_totals(m: &Market, t: usize, bundle: &[usize], p: &PriceVector) -> (Rational, Rational) {
    let value = bundle.iter().map(|&s| m.value(t, s)).sum();
    let paid = bundle
        .iter()
        .map(|&s| p.get(&m.items()[s]).expect("every item is priced"))
        .sum();
    (value, paid)
}

fn pricing_error(m: &Market, source: PricingError) -> SimError {
    SimError::Pricing {
        remaining: m.buyers().to_vec(),
        source,
    }
}

/// Runs the pricing process once for a fixed arrival order.
pub fn run_once(
    m: &Market,
    order: &[BuyerId],
    mode: PricingMode,
    policy: OrderingPolicy,
    tiebreak: TieBreak,
) -> Result<RunTrace, SimError> {
    let given: BTreeSet<&BuyerId> = order.iter().collect();
    if given.len() != order.len()
        || given.len() != m.n_buyers()
        || order.iter().any(|b| m.buyer_index(b).is_none())
    {
        return Err(SimError::NotPermutation);
    }
    let mut rng = match tiebreak {
        TieBreak::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut residual = m.clone();
    let mut steps = Vec::new();
    let mut welfare = Rational::zero();
    for buyer in order {
        let priced =
            price_round(&residual, mode, policy).map_err(|e| pricing_error(&residual, e))?;
        let t = residual.buyer_index(buyer).expect("checked permutation");
        let bundles = best_bundle_indices(
            &utilities(&residual, t, &priced.prices),
            residual.demand(t) as usize,
        );
        if mode == PricingMode::Multi && bundles.len() != 1 {
            return Err(SimError::NotUnique {
                buyer: buyer.clone(),
                count: bundles.len(),
            });
        }
        let pick = match (&mut rng, tiebreak) {
            (Some(rng), _) => rng.gen_range(0..bundles.len()),
            (None, TieBreak::Last) => bundles.len() - 1,
            _ => 0,
        };
        let chosen = &bundles[pick];
        let (value, paid) = bundle_totals(&residual, t, chosen, &priced.prices);
        let bundle: BTreeSet<ItemId> = chosen
            .iter()
            .map(|&s| residual.items()[s].clone())
            .collect();
        welfare += &value;
        let next = restrict_market(&residual, buyer, &bundle)?;
        steps.push(Step {
            buyer: buyer.clone(),
            prices: priced.prices,
            bundle,
            value,
            paid,
            choices: bundles.len(),
        });
        residual = next;
    }
    Ok(RunTrace {
        steps,
        final_welfare: welfare,
        leftover_items: residual.items().iter().cloned().collect(),
    })
}

type State = (u64, u64);

#[derive(Clone)]
struct Node {
    worst: Rational,
    leaves: u64,
    choice: Option<(usize, Vec<usize>)>,
}

struct Explorer<'a> {
    m: &'a Market,
    cfg: &'a SimConfig,
    memo: HashMap<State, Option<Node>>,
    priced: HashMap<State, PricedRound>,
    opt: HashMap<State, Rational>,
    rng: ChaCha8Rng,
    states: usize,
    truncated: bool,
    sampled: bool,
    max_choices: usize,
    infeasible_steps: u64,
}

fn members(mask: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask >> i & 1 == 1).collect()
}

impl<'a> Explorer<'a> {
    fn residual(&self, (bm, im): State) -> (Market, Vec<usize>, Vec<usize>) {
        let keep_b: Vec<bool> = (0..self.m.n_buyers()).map(|t| bm >> t & 1 == 1).collect();
        let keep_i: Vec<bool> = (0..self.m.n_items()).map(|s| im >> s & 1 == 1).collect();
        (
            self.m.submarket(&keep_i, &keep_b),
            members(bm, self.m.n_buyers()),
            members(im, self.m.n_items()),
        )
    }

    fn opt_of(&mut self, state: State) -> Rational {
        if let Some(v) = self.opt.get(&state) {
            return v.clone();
        }
        let v = oracle_opt_value(&self.residual(state).0);
        self.opt.insert(state, v.clone());
        v
    }

    fn explore(&mut self, state: State) -> Result<Option<Node>, SimError> {
        if let Some(n) = self.memo.get(&state) {
            return Ok(n.clone());
        }
        let (bm, im) = state;
        if bm == 0 {
            let leaf = Some(Node {
                worst: Rational::zero(),
                leaves: 1,
                choice: None,
            });
            self.memo.insert(state, leaf.clone());
            return Ok(leaf);
        }
        if self.states >= self.cfg.state_budget {
            self.truncated = true;
            return Ok(None);
        }
        self.states += 1;
        let (res, buyers, items) = self.residual(state);
        let priced = price_round(&res, self.cfg.mode, self.cfg.policy)
            .map_err(|e| pricing_error(&res, e))?;
        let opt_here = self.opt_of(state);
        let mut best: Option<Node> = None;
        for (r, &t) in buyers.iter().enumerate() {
            let mut bundles =
                best_bundle_indices(&utilities(&res, r, &priced.prices), res.demand(r) as usize);
            self.max_choices = self.max_choices.max(bundles.len());
            if self.cfg.mode == PricingMode::Multi && bundles.len() != 1 {
                return Err(SimError::NotUnique {
                    buyer: res.buyers()[r].clone(),
                    count: bundles.len(),
                });
            }
            if bundles.len() > self.cfg.branch_budget {
                let picked = index::sample(&mut self.rng, bundles.len(), self.cfg.branch_budget);
                bundles = picked.into_iter().map(|i| bundles[i].clone()).collect();
                self.sampled = true;
            }
            for bundle in bundles {
                let (value, _) = bundle_totals(&res, r, &bundle, &priced.prices);
                let orig: Vec<usize> = bundle.iter().map(|&s| items[s]).collect();
                let sold = orig.iter().fold(0u64, |acc, &s| acc | 1 << s);
                let next = (bm & !(1 << t), im & !sold);
                if &value + &self.opt_of(next) != opt_here {
                    self.infeasible_steps += 1;
                }
                let Some(child) = self.explore(next)? else {
                    continue;
                };
                let total = &value + &child.worst;
                match &mut best {
                    Some(node) => {
                        node.leaves = node.leaves.saturating_add(child.leaves);
                        if total < node.worst {
                            node.worst = total;
                            node.choice = Some((t, orig));
                        }
                    }
                    None => {
                        best = Some(Node {
                            worst: total,
                            leaves: child.leaves,
                            choice: Some((t, orig)),
                        })
                    }
                }
            }
        }
        self.priced.insert(state, priced);
        self.memo.insert(state, best.clone());
        Ok(best)
    }

    fn trace_from(&self, mut state: State) -> RunTrace {
        let mut steps = Vec::new();
        let mut welfare = Rational::zero();
        while let Some(Some(Node {
            choice: Some((t, bundle)),
            ..
        })) = self.memo.get(&state)
        {
            let prices = self.priced[&state].prices.clone();
            let value: Rational = bundle.iter().map(|&s| self.m.value(*t, s)).sum();
            let paid: Rational = bundle
                .iter()
                .map(|&s| {
                    prices
                        .get(&self.m.items()[s])
                        .expect("every item is priced")
                })
                .sum();
            let r = members(state.0, self.m.n_buyers())
                .iter()
                .position(|x| x == t)
                .expect("buyer present");
            let (res, _, _) = self.residual(state);
            let choices =
                best_bundle_indices(&utilities(&res, r, &prices), res.demand(r) as usize).len();
            welfare += &value;
            steps.push(Step {
                buyer: self.m.buyers()[*t].clone(),
                prices,
                bundle: bundle.iter().map(|&s| self.m.items()[s].clone()).collect(),
                value,
                paid,
                choices,
            });
            state = (
                state.0 & !(1 << t),
                bundle.iter().fold(state.1, |acc, &s| acc & !(1 << s)),
            );
        }
        RunTrace {
            steps,
            final_welfare: welfare,
            leftover_items: members(state.1, self.m.n_items())
                .into_iter()
                .map(|s| self.m.items()[s].clone())
                .collect(),
        }
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Explores every arrival order and every utility-maximizing choice.
///
/// The verdict's counterexample is a run of minimum welfare whenever that
/// welfare is below the optimum.
pub fn run_exhaustive(m: &Market, cfg: &SimConfig) -> Result<Verdict, SimError> {
    if m.n_buyers() > 64 || m.n_items() > 64 {
        return Err(SimError::TooLarge);
    }
    let mut ex = Explorer {
        m,
        cfg,
        memo: HashMap::new(),
        priced: HashMap::new(),
        opt: HashMap::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        states: 0,
        truncated: false,
        sampled: false,
        max_choices: 0,
        infeasible_steps: 0,
    };
    let root = (full_mask(m.n_buyers()), full_mask(m.n_items()));
    let optimum = ex.opt_of(root);
    let node = ex.explore(root)?;
    let (runs, worst) = match &node {
        Some(n) => (n.leaves, n.worst.clone()),
        None => (0, optimum.clone()),
    };
    let all_optimal = worst == optimum;
    let counterexample = (!all_optimal).then(|| ex.trace_from(root));
    Ok(Verdict {
        instance: None,
        mode: cfg.mode,
        runs_checked: runs,
        all_optimal,
        complete: !ex.truncated && !ex.sampled,
        optimum,
        worst_welfare: worst,
        states_explored: ex.states,
        max_choices: ex.max_choices,
        infeasible_steps: ex.infeasible_steps,
        counterexample,
    })
}

/// Checks `runs` random arrival orders with random tie-breaking.
pub fn run_random_orders(m: &Market, cfg: &SimConfig, runs: u64) -> Result<Verdict, SimError> {
    let optimum = oracle_opt_value(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<BuyerId> = m.buyers().to_vec();
    let mut worst: Option<RunTrace> = None;
    let mut max_choices = 0;
    for _ in 0..runs {
        order.shuffle(&mut rng);
        let trace = run_once(m, &order, cfg.mode, cfg.policy, TieBreak::Seeded(rng.gen()))?;
        max_choices = trace
            .steps
            .iter()
            .map(|s| s.choices)
            .fold(max_choices, usize::max);
        if worst
            .as_ref()
            .is_none_or(|w| trace.final_welfare < w.final_welfare)
        {
            worst = Some(trace);
        }
    }
    let worst_welfare = worst
        .as_ref()
        .map_or(optimum.clone(), |w| w.final_welfare.clone());
    let all_optimal = worst_welfare == optimum;
    Ok(Verdict {
        instance: None,
        mode: cfg.mode,
        runs_checked: runs,
        all_optimal,
        complete: false,
        optimum,
        worst_welfare,
        states_explored: 0,
        max_choices,
        infeasible_steps: 0,
        counterexample: if all_optimal { None } else { worst },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bidemand_pair, dangerous_market, market, two_optima_market, unit_pair};

    fn q(n: i64) -> Rational {
        Rational::from_integer(n)
    }

    fn ids(names: &[&str]) -> BTreeSet<ItemId> {
        names.iter().map(|s| ItemId::new(*s)).collect()
    }

    #[test]
    fn zero_utility_freedom() {
        let u = vec![q(0), q(-1)];
        assert_eq!(best_bundle_indices(&u, 1), vec![vec![], vec![0]]);
        let u = vec![q(-1), q(-2)];
        assert_eq!(best_bundle_indices(&u, 2), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn ties_and_padding() {
        let u = vec![q(3), q(1), q(1), q(0)];
        assert_eq!(best_bundle_indices(&u, 2), vec![vec![0, 1], vec![0, 2]]);
        assert_eq!(
            best_bundle_indices(&u, 4),
            vec![vec![0, 1, 2], vec![0, 1, 2, 3]]
        );
    }

    #[test]
    fn prices_above_values_leave_only_the_empty_bundle() {
        let m = unit_pair();
        let p = PriceVector {
            price: m.items().iter().map(|s| (s.clone(), q(100))).collect(),
            delta: q(0),
            blocked: BTreeSet::new(),
        };
        assert_eq!(
            best_bundles(&m, &BuyerId::new("t1"), &p).unwrap(),
            vec![BTreeSet::new()]
        );
    }

    #[test]
    fn e2_best_bundles_are_unique() {
        let m = bidemand_pair();
        let p = crate::pricing::round_prices_multi(&m, OrderingPolicy::Auto).unwrap();
        assert_eq!(
            best_bundles(&m, &"t1".into(), &p).unwrap(),
            vec![ids(&["s1", "s2"])]
        );
        assert_eq!(
            best_bundles(&m, &"t2".into(), &p).unwrap(),
            vec![ids(&["s3", "s4"])]
        );
    }

    #[test]
    fn run_once_on_e2_and_e1() {
        let m = bidemand_pair();
        for order in [["t1", "t2"], ["t2", "t1"]] {
            let order: Vec<BuyerId> = order.iter().map(|&b| b.into()).collect();
            let tr = run_once(
                &m,
                &order,
                PricingMode::Multi,
                OrderingPolicy::Auto,
                TieBreak::First,
            )
            .unwrap();
            assert_eq!(tr.final_welfare, q(14));
            assert!(tr.leftover_items.is_empty());
        }
        let m = unit_pair();
        for tb in [TieBreak::First, TieBreak::Last, TieBreak::Seeded(7)] {
            let order = vec![BuyerId::new("t2"), BuyerId::new("t1")];
            let tr = run_once(&m, &order, PricingMode::Unit, OrderingPolicy::Auto, tb).unwrap();
            assert_eq!(tr.final_welfare, q(5));
        }
    }

    #[test]
    fn run_once_rejects_bad_orders() {
        let order = vec![BuyerId::new("t1"), BuyerId::new("t1")];
        assert_eq!(
            run_once(
                &unit_pair(),
                &order,
                PricingMode::Unit,
                OrderingPolicy::Auto,
                TieBreak::First
            ),
            Err(SimError::NotPermutation)
        );
    }

    #[test]
    fn empty_market() {
        let m = Market::new(Vec::new(), Vec::new()).unwrap();
        let tr = run_once(
            &m,
            &[],
            PricingMode::Multi,
            OrderingPolicy::Auto,
            TieBreak::First,
        )
        .unwrap();
        assert!(tr.steps.is_empty());
        assert_eq!(tr.final_welfare, q(0));
        let v = run_exhaustive(&m, &SimConfig::default()).unwrap();
        assert!(v.all_optimal);
        assert_eq!(v.runs_checked, 1);
    }

    #[test]
    fn exhaustive_e1_unit() {
        let v = run_exhaustive(&unit_pair(), &SimConfig::new(PricingMode::Unit)).unwrap();
        assert!(v.all_optimal && v.complete);
        assert_eq!(v.optimum, q(5));
        assert!(v.runs_checked >= 2);
        assert_eq!(v.infeasible_steps, 0);
    }

    #[test]
    fn exhaustive_e2_multi() {
        let v = run_exhaustive(&bidemand_pair(), &SimConfig::default()).unwrap();
        assert!(v.all_optimal && v.complete);
        assert_eq!(v.runs_checked, 2);
        assert_eq!(v.max_choices, 1);
    }

    #[test]
    fn unit_ties_are_explored() {
        let m = market(&[1, 1], &[&[1, 1], &[1, 1]]);
        let v = run_exhaustive(&m, &SimConfig::new(PricingMode::Unit)).unwrap();
        assert!(v.all_optimal);
        assert!(v.max_choices >= 2);
        assert!(v.runs_checked > 2);
    }

    #[test]
    fn two_optima_never_hands_out_the_infeasible_pair() {
        let m = two_optima_market();
        let v = run_exhaustive(&m, &SimConfig::default()).unwrap();
        assert!(v.all_optimal && v.complete);
        assert_eq!(v.infeasible_steps, 0);
    }

    #[test]
    fn d1_market_is_sound() {
        let v = run_exhaustive(&dangerous_market(), &SimConfig::default()).unwrap();
        assert!(v.all_optimal, "{v:?}");
    }

    #[test]
    fn state_budget_gives_partial_verdict() {
        let cfg = SimConfig {
            state_budget: 1,
            ..SimConfig::default()
        };
        let v = run_exhaustive(&dangerous_market(), &cfg).unwrap();
        assert!(!v.complete);
        assert_eq!(v.states_explored, 1);
    }

    #[test]
    fn random_orders_agree() {
        let cfg = SimConfig {
            seed: 3,
            ..SimConfig::default()
        };
        let v = run_random_orders(&dangerous_market(), &cfg, 20).unwrap();
        assert!(v.all_optimal);
        assert_eq!(v.runs_checked, 20);
    }

    #[test]
    fn bad_ordering_control_has_a_counterexample_trace() {
        let text = include_str!("../tests/data/negative_control.json");
        let m = crate::io::parse_instance(text.as_bytes()).unwrap();
        let cfg = SimConfig {
            policy: OrderingPolicy::Reversed,
            ..SimConfig::default()
        };
        let v = run_exhaustive(&m, &cfg).unwrap();
        assert!(!v.all_optimal);
        assert!(v.infeasible_steps > 0);
        let tr = v.counterexample.as_ref().unwrap();
        assert!(tr.final_welfare < v.optimum);
        assert_eq!(tr.final_welfare, v.worst_welfare);
        let replay = run_once(
            &m,
            &tr.steps.iter().map(|s| s.buyer.clone()).collect::<Vec<_>>(),
            PricingMode::Multi,
            OrderingPolicy::Reversed,
            TieBreak::First,
        )
        .unwrap();
        assert_eq!(&replay, tr);
    }
}
