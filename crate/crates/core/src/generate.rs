//! Seeded random markets in which every optimal allocation fills every
//! demand.
//!
//! There are exactly as many items as total demand and every value is a
//! positive integer, so leaving any demand unfilled wastes a positive value.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{check_opt_property, BuyerId, BuyerSpec, ItemId, Market};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("value range {lo}..={hi} must be non-empty and strictly positive")]
    BadRange { lo: u64, hi: u64 },
    #[error("demands must be positive")]
    ZeroDemand,
}

const MAX_ATTEMPTS: usize = 1000;

/// Buyers `t1..`, items `s1..s{b(T)}`, values uniform in `values`.
pub fn generate_instance(
    seed: u64,
    demands: &[u32],
    values: RangeInclusive<u64>,
) -> Result<Market, GenerateError> {
    let (lo, hi) = (*values.start(), *values.end());
    if lo == 0 || lo > hi || hi > i64::MAX as u64 {
        return Err(GenerateError::BadRange { lo, hi });
    }
    if demands.contains(&0) {
        return Err(GenerateError::ZeroDemand);
    }
    let n_items: usize = demands.iter().map(|&d| d as usize).sum();
    let items: Vec<ItemId> = (1..=n_items)
        .map(|s| ItemId::new(format!("s{s}")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let buyers = demands
            .iter()
            .enumerate()
            .map(|(t, &demand)| BuyerSpec {
                id: BuyerId::new(format!("t{}", t + 1)),
                demand,
                values: (0..n_items)
                    .map(|_| Rational::from_integer(rng.gen_range(lo..=hi) as i64))
                    .collect(),
            })
            .collect();
        let m = Market::new(items.clone(), buyers)
            .expect("generated ids are distinct and demands positive");
        if check_opt_property(&m).opt_property_holds {
            return Ok(m);
        }
        last = Some(m);
    }
    Ok(last.expect("at least one attempt"))
}
