//! Solver and simulator toolkit for approximately revenue-optimal simple
//! mechanisms (rationed posted prices and two-part tariffs) in multi-item
//! auctions with item-independent discrete value distributions.
//!
//! The pipeline: estimate the best rationed posted-price revenue, build a
//! discretized dual grid from it, assemble the lifted LP relaxation over
//! marginal reduced forms, solve it, read off item prices, and simulate the
//! resulting two-part tariff. Brute-force oracles (optimal BIC revenue,
//! generator enumeration) provide ground truth at desk scale.

pub mod battery;
pub mod diagnostics;
pub mod exact;
pub mod lp;
pub mod mechanisms;
pub mod model;
pub mod num;
pub mod oracles;
pub mod polytopes;
pub mod relaxation;
pub mod sampling;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{what}: size {size} exceeds cap {cap}")]
    CapExceeded { what: String, size: u128, cap: u128 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("internal error: {0}")]
    Internal(String),
}
