//! Reconstructs cash flow trees from transaction traces, lifts them into
//! DeFi actions and flags price-manipulation patterns.

pub mod actions;
pub mod amm;
pub mod cft;
pub mod detect;
pub mod lift;
pub mod pipeline;
pub mod report;
pub mod trace;
pub mod units;
