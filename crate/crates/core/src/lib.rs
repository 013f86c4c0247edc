//! Fisher-metric regularized transport on top of flow-matching behavior policies.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod density;
pub mod envs;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod flow;
pub mod nn;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
