//! Optimal dynamic pricing for multi-demand markets.
//!
//! The engine solves the maximum welfare b-matching problem exactly, refines
//! an optimal dual solution so that tight edges are exactly the edges used by
//! some optimal allocation, orders the items so that every buyer's cheapest
//! tight bundle can be completed to an optimum, and posts prices derived from
//! both. A simulator replays every arrival order and every tie-break to check
//! that the resulting allocation is always welfare-maximizing.

#![allow(clippy::result_large_err, clippy::needless_range_loop)]

pub mod dual;
pub mod fixtures;
pub mod generate;
pub mod io;
pub mod matching;
pub mod model;
pub mod oracle;
pub mod ordering;
pub mod pricing;
pub mod rational;
pub mod sets;
pub mod simulation;

pub use matching::{BMatching, BipartiteGraph, Covering, Vertex};
pub use model::{Allocation, BuyerId, ItemId, Market};
pub use rational::Rational;
