//! Real-time bidding and market clearing for EV aggregators.

// NaN must fail these guards.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bidding;
pub mod fleet;
pub mod harness;
pub mod market;
pub mod par;
pub mod scenario;
pub mod scheduler;
pub mod solver;
