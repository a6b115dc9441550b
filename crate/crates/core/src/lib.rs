//! Sparse second-order stochastic dominance spanning of portfolio sets.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backtest;
pub mod error;
pub mod inference;
pub mod lp;
pub mod metrics;
pub mod panel;
pub mod regress;
pub mod spanning;
pub mod synth;
pub mod utility;

pub use error::{Error, Result};
