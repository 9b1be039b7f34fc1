//! Conductance estimation for bursting neurons with adaptive observers.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod integrate;
pub mod mismatch;
pub mod model;
pub mod observers;
pub mod runner;

pub use error::{Error, Result};
