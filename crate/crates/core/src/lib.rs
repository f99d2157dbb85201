// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convex;
pub mod dynamics;
pub mod ellipsoid;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod reachability;
pub mod synthesis;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
