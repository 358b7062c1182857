//! Continuous-time dynamic graph learning with a sampling-based structure
//! enhancer and an information-bottleneck neighborhood filter on a
//! memory-plus-attention backbone.

// `!(x > 0.0)` deliberately rejects NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod backbone;
pub mod config;
pub mod enhancer;
pub mod error;
pub mod exec;
pub mod filter;
pub mod graph;
pub mod numerics;
pub mod synth;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;

/// Whether a forward pass draws stochastic samples (training) or uses
/// deterministic expectations (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
