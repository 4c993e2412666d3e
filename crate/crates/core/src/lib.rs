//! Operator renewal numerics for suspension semiflows over LSV maps.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod config;
pub mod curve;
pub mod error;
pub mod function_space;
pub mod harness;
pub mod induced;
pub mod interval_maps;
pub mod inversion;
pub mod monte_carlo;
pub mod renewal;
pub mod transfer;

pub use error::{Error, Result};
